//! Bit-accurate emulation of the accelerator's signed fixed-point datapath.
//!
//! A [`QFormat`] with half-width `n` is a `2n`-bit two's-complement word:
//! one sign bit, `n` integer bits and `n − 1` fraction bits, so
//! `value = raw / 2^(n−1)` with `raw ∈ [−2^(2n−1), 2^(2n−1) − 1]`.
//!
//! Every rounding step is round-half-to-even and every range overflow
//! saturates silently; clamps are tallied in [`SaturationStats`].

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::pointnet::{GlobalFeature, PointNetParams, FEATURE_DIM};
use crate::scalar::Real;

/// Half-widths evaluated in the quantization sweep.
pub const SWEEP_HALF_WIDTHS: [u32; 5] = [8, 10, 12, 14, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QFormat {
    n: u32,
}

impl QFormat {
    /// Largest supported half-width; keeps raw words in `i64` and
    /// double-width accumulators in `i128`.
    pub const MAX_HALF_WIDTH: u32 = 31;

    pub fn new(n: u32) -> Result<Self> {
        if (2..=Self::MAX_HALF_WIDTH).contains(&n) {
            Ok(Self { n })
        } else {
            Err(invalid(format!(
                "half-width n must be in 2..={}, got {n}",
                Self::MAX_HALF_WIDTH
            )))
        }
    }

    pub fn half_width(&self) -> u32 {
        self.n
    }
    pub fn total_bits(&self) -> u32 {
        2 * self.n
    }
    pub fn integer_bits(&self) -> u32 {
        self.n
    }
    pub fn fraction_bits(&self) -> u32 {
        self.n - 1
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (2 * self.n - 1)) - 1
    }
    pub fn raw_min(&self) -> i64 {
        -(1i64 << (2 * self.n - 1))
    }

    /// The value of one least-significant bit.
    pub fn ulp(&self) -> f64 {
        (-(self.fraction_bits() as f64)).exp2()
    }

    fn wide_max(&self) -> i128 {
        (1i128 << (4 * self.n - 1)) - 1
    }
    fn wide_min(&self) -> i128 {
        -(1i128 << (4 * self.n - 1))
    }

    fn clamp(&self, v: i128, stats: &mut SaturationStats) -> i64 {
        if v > self.raw_max() as i128 {
            stats.clamps += 1;
            self.raw_max()
        } else if v < self.raw_min() as i128 {
            stats.clamps += 1;
            self.raw_min()
        } else {
            v as i64
        }
    }

    fn clamp_wide(&self, v: i128, stats: &mut SaturationStats) -> i128 {
        if v > self.wide_max() {
            stats.clamps += 1;
            self.wide_max()
        } else if v < self.wide_min() {
            stats.clamps += 1;
            self.wide_min()
        } else {
            v
        }
    }
}

impl TryFrom<u32> for QFormat {
    type Error = crate::error::Error;
    fn try_from(n: u32) -> Result<Self> {
        Self::new(n)
    }
}

impl From<QFormat> for u32 {
    fn from(f: QFormat) -> u32 {
        f.n
    }
}

impl std::fmt::Display for QFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}.{}", self.integer_bits(), self.fraction_bits())
    }
}

/// Number of range clamps performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaturationStats {
    pub clamps: u64,
}

impl SaturationStats {
    pub fn merge(&mut self, other: SaturationStats) {
        self.clamps += other.clamps;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QValue {
    raw: i64,
    format: QFormat,
}

impl QValue {
    pub fn from_raw(raw: i64, format: QFormat) -> Result<Self> {
        if raw < format.raw_min() || raw > format.raw_max() {
            return Err(invalid(format!("raw word {raw} outside {format}")));
        }
        Ok(Self { raw, format })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }
    pub fn format(&self) -> QFormat {
        self.format
    }
    pub fn to_f64(&self) -> f64 {
        dequantize_raw(self.raw, self.format)
    }
}

/// A vector of raw words sharing one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub raw: Vec<i64>,
    pub format: QFormat,
}

impl QTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.raw
            .iter()
            .map(|r| dequantize_raw(*r, self.format))
            .collect()
    }
}

/// Arithmetic right shift by `shift` bits rounding half to even.
pub(crate) fn round_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

fn quantize_raw(x: f64, format: QFormat, stats: &mut SaturationStats) -> Result<i64> {
    if x.is_nan() {
        return Err(invalid("cannot quantize NaN"));
    }
    let scaled = (x * format.ulp().recip()).round_ties_even();
    if scaled > format.raw_max() as f64 {
        stats.clamps += 1;
        Ok(format.raw_max())
    } else if scaled < format.raw_min() as f64 {
        stats.clamps += 1;
        Ok(format.raw_min())
    } else {
        Ok(scaled as i64)
    }
}

pub fn dequantize_raw(raw: i64, format: QFormat) -> f64 {
    raw as f64 * format.ulp()
}

/// Round-to-nearest-even of `x·2^(n−1)`, saturated to the word range.
pub fn quantize(x: f64, format: QFormat) -> Result<QValue> {
    quantize_counted(x, format, &mut SaturationStats::default())
}

pub fn quantize_counted(x: f64, format: QFormat, stats: &mut SaturationStats) -> Result<QValue> {
    Ok(QValue {
        raw: quantize_raw(x, format, stats)?,
        format,
    })
}

pub fn dequantize(q: QValue) -> f64 {
    q.to_f64()
}

/// Saturating fixed-point addition.
///
/// # Panics
/// If the operands have different formats.
pub fn q_add(a: QValue, b: QValue, stats: &mut SaturationStats) -> QValue {
    assert_eq!(a.format, b.format, "q_add operands differ in format");
    QValue {
        raw: a.format.clamp(a.raw as i128 + b.raw as i128, stats),
        format: a.format,
    }
}

/// Exact product, rounded back to `n − 1` fraction bits, then saturated.
///
/// # Panics
/// If the operands have different formats.
pub fn q_mul(a: QValue, b: QValue, stats: &mut SaturationStats) -> QValue {
    assert_eq!(a.format, b.format, "q_mul operands differ in format");
    let f = a.format.fraction_bits();
    let wide = round_shift(a.raw as i128 * b.raw as i128, f);
    QValue {
        raw: a.format.clamp(wide, stats),
        format: a.format,
    }
}

/// Where the FC dot product is brought back to word width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccumulatorMode {
    /// Products accumulate in a `4n`-bit register; one rounding per output.
    #[default]
    PerOutput,
    /// Every product is rounded and saturated before accumulation.
    PerMac,
}

#[derive(Debug, Clone)]
struct QLayer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<i64>,
    bias: Vec<i64>,
    bn_scale: Vec<i64>,
    bn_shift: Vec<i64>,
}

/// A PointNet with every parameter quantized to one [`QFormat`]. Batch norm
/// is folded into a per-channel `scale`/`shift` pair before quantization.
#[derive(Debug)]
pub struct QuantizedPointNet {
    format: QFormat,
    mode: AccumulatorMode,
    layers: Vec<QLayer>,
    load_stats: SaturationStats,
    runtime_clamps: AtomicU64,
}

impl Clone for QuantizedPointNet {
    fn clone(&self) -> Self {
        Self {
            format: self.format,
            mode: self.mode,
            layers: self.layers.clone(),
            load_stats: self.load_stats,
            runtime_clamps: AtomicU64::new(self.runtime_clamps.load(Ordering::Relaxed)),
        }
    }
}

impl QuantizedPointNet {
    pub fn new<T: Real>(params: &PointNetParams<T>, format: QFormat) -> Self {
        Self::with_mode(params, format, AccumulatorMode::PerOutput)
    }

    pub fn with_mode<T: Real>(
        params: &PointNetParams<T>,
        format: QFormat,
        mode: AccumulatorMode,
    ) -> Self {
        let mut stats = SaturationStats::default();
        let mut q = |v: &[T]| -> Vec<i64> {
            v.iter()
                .map(|x| quantize_raw(x.as_f64(), format, &mut stats).expect("params are finite"))
                .collect()
        };
        let layers = params
            .layers()
            .iter()
            .map(|layer| {
                let (scale, shift) = layer.folded_bn();
                QLayer {
                    in_dim: layer.in_dim(),
                    out_dim: layer.out_dim(),
                    weight: q(layer.weight()),
                    bias: q(layer.bias()),
                    bn_scale: q(&scale),
                    bn_shift: q(&shift),
                }
            })
            .collect();
        Self {
            format,
            mode,
            layers,
            load_stats: stats,
            runtime_clamps: AtomicU64::new(0),
        }
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn mode(&self) -> AccumulatorMode {
        self.mode
    }

    /// Clamps incurred while quantizing the parameters.
    pub fn load_stats(&self) -> SaturationStats {
        self.load_stats
    }

    /// Clamps accumulated by every feature extraction since construction.
    pub fn runtime_clamps(&self) -> u64 {
        self.runtime_clamps.load(Ordering::Relaxed)
    }

    pub fn quantize_point(&self, p: &Vector3<f64>, stats: &mut SaturationStats) -> [i64; 3] {
        let mut out = [0i64; 3];
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o = quantize_raw(*v, self.format, stats).expect("cloud coordinates are finite");
        }
        out
    }

    fn fc(&self, layer: &QLayer, x: &[i64], out: &mut [i64], stats: &mut SaturationStats) {
        let fmt = self.format;
        let f = fmt.fraction_bits();
        for (i, y) in out.iter_mut().enumerate().take(layer.out_dim) {
            let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
            *y = match self.mode {
                AccumulatorMode::PerOutput if fmt.n <= 15 => {
                    // 4n ≤ 60 bits: the accumulator and one product fit an i64.
                    let (hi, lo) = (fmt.wide_max() as i64, fmt.wide_min() as i64);
                    let mut acc = layer.bias[i] << f;
                    for (w, v) in row.iter().zip(x) {
                        acc += w * v;
                        if acc > hi {
                            stats.clamps += 1;
                            acc = hi;
                        } else if acc < lo {
                            stats.clamps += 1;
                            acc = lo;
                        }
                    }
                    fmt.clamp(round_shift(acc as i128, f), stats)
                }
                AccumulatorMode::PerOutput => {
                    let mut acc = (layer.bias[i] as i128) << f;
                    for (w, v) in row.iter().zip(x) {
                        acc = fmt.clamp_wide(acc + *w as i128 * *v as i128, stats);
                    }
                    fmt.clamp(round_shift(acc, f), stats)
                }
                AccumulatorMode::PerMac => {
                    let mut acc = layer.bias[i];
                    for (w, v) in row.iter().zip(x) {
                        let prod = fmt.clamp(round_shift(*w as i128 * *v as i128, f), stats);
                        acc = fmt.clamp(acc as i128 + prod as i128, stats);
                    }
                    acc
                }
            };
        }
    }

    fn bn_relu(&self, layer: &QLayer, x: &[i64], out: &mut [i64], stats: &mut SaturationStats) {
        let fmt = self.format;
        let f = fmt.fraction_bits();
        for i in 0..layer.out_dim {
            let y = match self.mode {
                AccumulatorMode::PerOutput => {
                    let wide = x[i] as i128 * layer.bn_scale[i] as i128
                        + ((layer.bn_shift[i] as i128) << f);
                    fmt.clamp(round_shift(wide, f), stats)
                }
                AccumulatorMode::PerMac => {
                    let prod = fmt.clamp(round_shift(x[i] as i128 * layer.bn_scale[i] as i128, f), stats);
                    fmt.clamp(prod as i128 + layer.bn_shift[i] as i128, stats)
                }
            };
            out[i] = y.max(0);
        }
    }

    /// Streams raw input points through the network, max-pooling into a
    /// zero-initialized raw feature.
    pub fn global_feature_raw<I>(&self, points: I, stats: &mut SaturationStats) -> QTensor
    where
        I: IntoIterator<Item = [i64; 3]>,
    {
        let mut phi = vec![0i64; FEATURE_DIM];
        let mut a = vec![0i64; FEATURE_DIM];
        let mut b = vec![0i64; FEATURE_DIM];
        for p in points {
            a[..3].copy_from_slice(&p);
            let mut width = 3;
            for layer in &self.layers {
                self.fc(layer, &a[..width], &mut b, stats);
                self.bn_relu(layer, &b, &mut a, stats);
                width = layer.out_dim;
            }
            for (m, v) in phi.iter_mut().zip(&a) {
                *m = (*m).max(*v);
            }
        }
        QTensor {
            raw: phi,
            format: self.format,
        }
    }

    pub fn global_feature<T: Real>(
        &self,
        cloud: &PointCloud<T>,
    ) -> (GlobalFeature<f64>, SaturationStats) {
        let mut stats = SaturationStats::default();
        let raw_points: Vec<[i64; 3]> = cloud
            .iter()
            .map(|p| self.quantize_point(&p.map(|v| v.as_f64()), &mut stats))
            .collect();
        let feature = self.global_feature_raw(raw_points, &mut stats);
        self.runtime_clamps.fetch_add(stats.clamps, Ordering::Relaxed);
        (GlobalFeature::new(feature.dequantize()), stats)
    }
}

/// Quantized forward pass of `params` on `cloud`. Saturation counts include
/// clamps from quantizing the parameters themselves.
pub fn quantized_global_feature<T: Real>(
    params: &PointNetParams<T>,
    cloud: &PointCloud<T>,
    format: QFormat,
) -> (GlobalFeature<f64>, SaturationStats) {
    let net = QuantizedPointNet::new(params, format);
    let (feature, mut stats) = net.global_feature(cloud);
    stats.merge(net.load_stats());
    (feature, stats)
}
