//! Floating-point PointNet feature extractor.
//!
//! Five `FC → BN-ReLU` stages map each point to a 1024-D local feature;
//! the global feature is their element-wise maximum. Evaluation streams one
//! point at a time through fixed scratch buffers, so working memory does not
//! depend on the number of points.

use nalgebra::{DMatrix, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::scalar::Real;

/// `(in, out)` dimensions of the five fully-connected layers.
pub const LAYER_DIMS: [(usize, usize); 5] = [(3, 64), (64, 64), (64, 64), (64, 128), (128, 1024)];

pub const FEATURE_DIM: usize = 1024;

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

/// One fully-connected layer followed by inference-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    weight: Vec<T>,
    bias: Vec<T>,
    bn_weight: Vec<T>,
    bn_bias: Vec<T>,
    bn_mean: Vec<T>,
    bn_var: Vec<T>,
    epsilon: T,
}

impl<T: Real> LayerParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<T>,
        bias: Vec<T>,
        bn_weight: Vec<T>,
        bn_bias: Vec<T>,
        bn_mean: Vec<T>,
        bn_var: Vec<T>,
        epsilon: T,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid("layer dimensions must be positive"));
        }
        if weight.len() != in_dim * out_dim {
            return Err(invalid(format!(
                "weight has {} entries, expected {out_dim}×{in_dim}",
                weight.len()
            )));
        }
        for (name, v) in [
            ("bias", &bias),
            ("bn_weight", &bn_weight),
            ("bn_bias", &bn_bias),
            ("bn_mean", &bn_mean),
            ("bn_var", &bn_var),
        ] {
            if v.len() != out_dim {
                return Err(invalid(format!(
                    "{name} has {} entries, expected {out_dim}",
                    v.len()
                )));
            }
        }
        if bn_var.iter().any(|v| !(*v >= T::zero())) {
            return Err(invalid("bn_var entries must be ≥ 0"));
        }
        if !(epsilon > T::zero()) {
            return Err(invalid("epsilon must be > 0"));
        }
        let all_finite = [&weight, &bias, &bn_weight, &bn_bias, &bn_mean, &bn_var]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite || !epsilon.is_finite() {
            return Err(invalid("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            bn_weight,
            bn_bias,
            bn_mean,
            bn_var,
            epsilon,
        })
    }

    /// `W = I` (zero-padded or truncated), zero bias, and batch norm that
    /// reduces to the identity: `μ = 0`, `σ² = 1 − ε`, `w = 1`, `b = 0`.
    pub fn pass_through(in_dim: usize, out_dim: usize) -> Self {
        let mut weight = vec![T::zero(); in_dim * out_dim];
        for i in 0..in_dim.min(out_dim) {
            weight[i * in_dim + i] = T::one();
        }
        let eps = T::of(DEFAULT_BN_EPSILON);
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
            bn_weight: vec![T::one(); out_dim],
            bn_bias: vec![T::zero(); out_dim],
            bn_mean: vec![T::zero(); out_dim],
            bn_var: vec![T::one() - eps; out_dim],
            epsilon: eps,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn weight(&self) -> &[T] {
        &self.weight
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn bn_weight(&self) -> &[T] {
        &self.bn_weight
    }
    pub fn bn_bias(&self) -> &[T] {
        &self.bn_bias
    }
    pub fn bn_mean(&self) -> &[T] {
        &self.bn_mean
    }
    pub fn bn_var(&self) -> &[T] {
        &self.bn_var
    }
    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn weight_row(&self, row: usize) -> &[T] {
        &self.weight[row * self.in_dim..(row + 1) * self.in_dim]
    }

    /// Batch norm as a per-channel affine map `x·scale + shift`.
    pub fn folded_bn(&self) -> (Vec<T>, Vec<T>) {
        (0..self.out_dim)
            .map(|i| {
                let scale = self.bn_weight[i] / (self.bn_var[i] + self.epsilon).sqrt();
                (scale, self.bn_bias[i] - self.bn_mean[i] * scale)
            })
            .unzip()
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        LayerParams {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: c(&self.weight),
            bias: c(&self.bias),
            bn_weight: c(&self.bn_weight),
            bn_bias: c(&self.bn_bias),
            bn_mean: c(&self.bn_mean),
            bn_var: c(&self.bn_var),
            epsilon: U::of(self.epsilon.as_f64()),
        }
    }
}

/// The loadable model: exactly five layers chained 3→64→64→64→128→1024.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNetParams<T> {
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> PointNetParams<T> {
    pub fn new(layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.len() != LAYER_DIMS.len() {
            return Err(invalid(format!(
                "expected {} layers, got {}",
                LAYER_DIMS.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(k, l))) in layers.iter().zip(LAYER_DIMS.iter()).enumerate() {
            if layer.in_dim != k || layer.out_dim != l {
                return Err(invalid(format!(
                    "layer {i} is {}→{}, expected {k}→{l}",
                    layer.in_dim, layer.out_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn pass_through() -> Self {
        Self {
            layers: LAYER_DIMS
                .iter()
                .map(|&(k, l)| LayerParams::pass_through(k, l))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn cast<U: Real>(&self) -> PointNetParams<U> {
        PointNetParams {
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }
}

/// Seeded random model with weights in `[−1, 1]` and batch-norm running
/// statistics estimated on random unit-cube points, so activations stay at
/// unit scale the way they do in a trained network.
pub fn random_params(seed: u64) -> PointNetParams<f64> {
    const CALIBRATION_POINTS: usize = 256;
    // Floor keeps the folded BN scale bounded for near-constant channels.
    const MIN_RUNNING_VAR: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut activations: Vec<Vec<f64>> = (0..CALIBRATION_POINTS)
        .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let mut layers = Vec::with_capacity(LAYER_DIMS.len());
    for &(k, l) in LAYER_DIMS.iter() {
        let weight: Vec<f64> = (0..k * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..l).map(|_| rng.random_range(-0.1..0.1)).collect();
        let bn_weight: Vec<f64> = (0..l).map(|_| rng.random_range(0.5..1.5)).collect();
        let bn_bias: Vec<f64> = (0..l).map(|_| rng.random_range(-0.2..0.2)).collect();

        let pre: Vec<Vec<f64>> = activations
            .iter()
            .map(|x| {
                (0..l)
                    .map(|i| dot(&weight[i * k..(i + 1) * k], x) + bias[i])
                    .collect()
            })
            .collect();
        let count = pre.len() as f64;
        let bn_mean: Vec<f64> = (0..l)
            .map(|i| pre.iter().map(|y| y[i]).sum::<f64>() / count)
            .collect();
        let bn_var: Vec<f64> = (0..l)
            .map(|i| {
                let var = pre.iter().map(|y| (y[i] - bn_mean[i]).powi(2)).sum::<f64>() / count;
                var.max(MIN_RUNNING_VAR)
            })
            .collect();

        let layer = LayerParams::new(
            k,
            l,
            weight,
            bias,
            bn_weight,
            bn_bias,
            bn_mean,
            bn_var,
            DEFAULT_BN_EPSILON,
        )
        .expect("generated layer is consistent");
        activations = pre
            .iter()
            .map(|y| {
                let mut out = vec![0.0; l];
                bn_relu_into(&layer, y, &mut out);
                out
            })
            .collect();
        layers.push(layer);
    }
    PointNetParams { layers }
}

/// The aggregated 1024-D descriptor of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature<T>(Vec<T>);

impl<T: Real> GlobalFeature<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    /// The `−∞` sentinel: the most negative finite value of `T`.
    pub fn neg_infinity(dim: usize) -> Self {
        Self(vec![T::min_value().expect("real field has a minimum"); dim])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Initial value of the max-pool accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureInit {
    /// Zeros, as the hardware core does. Equivalent to `−∞` after ReLU.
    #[default]
    Zero,
    NegInfinity,
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn fc_into<T: Real>(layer: &LayerParams<T>, x: &[T], out: &mut [T]) {
    for (i, y) in out.iter_mut().enumerate().take(layer.out_dim) {
        *y = dot(layer.weight_row(i), x) + layer.bias[i];
    }
}

fn bn_relu_into<T: Real>(layer: &LayerParams<T>, x: &[T], out: &mut [T]) {
    for i in 0..layer.out_dim {
        let normalized = (x[i] - layer.bn_mean[i]) / (layer.bn_var[i] + layer.epsilon).sqrt();
        out[i] = (normalized * layer.bn_weight[i] + layer.bn_bias[i]).max(T::zero());
    }
}

/// `y = Wx + b`.
pub fn fc_forward<T: Real>(layer: &LayerParams<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != layer.in_dim {
        return Err(invalid(format!(
            "fc input has {} entries, expected {}",
            x.len(),
            layer.in_dim
        )));
    }
    let mut out = vec![T::zero(); layer.out_dim];
    fc_into(layer, x, &mut out);
    Ok(out)
}

/// `yᵢ = max(0, (xᵢ − μᵢ)/√(σᵢ² + ε) · wᵢ + bᵢ)` over the layer's output
/// channels.
pub fn bn_relu_forward<T: Real>(layer: &LayerParams<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != layer.out_dim {
        return Err(invalid(format!(
            "bn-relu input has {} entries, expected {}",
            x.len(),
            layer.out_dim
        )));
    }
    let mut out = vec![T::zero(); layer.out_dim];
    bn_relu_into(layer, x, &mut out);
    Ok(out)
}

/// `φᵢ ← max(φᵢ, ψᵢ)`.
pub fn maxpool_update<T: Real>(phi: &mut GlobalFeature<T>, psi: &[T]) -> Result<()> {
    if phi.0.len() != psi.len() {
        return Err(invalid(format!(
            "max-pool lengths differ: {} vs {}",
            phi.0.len(),
            psi.len()
        )));
    }
    maxpool_into(&mut phi.0, psi);
    Ok(())
}

#[inline]
fn maxpool_into<T: Real>(phi: &mut [T], psi: &[T]) {
    for (a, b) in phi.iter_mut().zip(psi) {
        if *b > *a {
            *a = *b;
        }
    }
}

/// Two ping-pong buffers sized for the widest layer.
struct Scratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new() -> Self {
        Self {
            a: vec![T::zero(); FEATURE_DIM],
            b: vec![T::zero(); FEATURE_DIM],
        }
    }

    /// Runs the five stages on `p`; the local feature ends up in `self.a`.
    fn propagate(&mut self, params: &PointNetParams<T>, p: &Vector3<T>) {
        self.a[..3].copy_from_slice(p.as_slice());
        let mut width = 3;
        for layer in &params.layers {
            fc_into(layer, &self.a[..width], &mut self.b);
            bn_relu_into(layer, &self.b, &mut self.a);
            width = layer.out_dim;
        }
    }
}

/// `ψ(p)`: the point's 1024-D local feature.
pub fn local_feature<T: Real>(params: &PointNetParams<T>, p: &Vector3<T>) -> Vec<T> {
    let mut scratch = Scratch::new();
    scratch.propagate(params, p);
    scratch.a
}

/// `φ(P)` with zero initialization.
pub fn global_feature<T: Real>(
    params: &PointNetParams<T>,
    cloud: &PointCloud<T>,
) -> Result<GlobalFeature<T>> {
    global_feature_with(params, cloud, FeatureInit::Zero)
}

pub fn global_feature_with<T: Real>(
    params: &PointNetParams<T>,
    cloud: &PointCloud<T>,
    init: FeatureInit,
) -> Result<GlobalFeature<T>> {
    global_feature_of_points(params, cloud.points(), init)
}

pub(crate) fn global_feature_of_points<T: Real>(
    params: &PointNetParams<T>,
    points: &[Vector3<T>],
    init: FeatureInit,
) -> Result<GlobalFeature<T>> {
    if points.is_empty() {
        return Err(invalid("cannot extract a feature from an empty cloud"));
    }
    let mut phi = match init {
        FeatureInit::Zero => GlobalFeature::zeros(FEATURE_DIM),
        FeatureInit::NegInfinity => GlobalFeature::neg_infinity(FEATURE_DIM),
    };
    let mut scratch = Scratch::new();
    for p in points {
        scratch.propagate(params, p);
        maxpool_into(&mut phi.0, &scratch.a);
    }
    Ok(phi)
}

/// All-points-at-once reference: each layer is one `N×K · Kᵀ×L` product.
/// Memory is linear in `N`; used to cross-check the streaming path.
pub fn batch_global_feature<T: Real>(
    params: &PointNetParams<T>,
    cloud: &PointCloud<T>,
) -> GlobalFeature<T> {
    let n = cloud.len();
    let mut x = DMatrix::<T>::from_fn(n, 3, |r, c| cloud.points()[r][c]);
    for layer in &params.layers {
        let w = DMatrix::from_row_slice(layer.out_dim, layer.in_dim, &layer.weight);
        let mut y = &x * w.transpose();
        for c in 0..layer.out_dim {
            for r in 0..n {
                let v = y[(r, c)] + layer.bias[c];
                let normalized = (v - layer.bn_mean[c]) / (layer.bn_var[c] + layer.epsilon).sqrt();
                y[(r, c)] = (normalized * layer.bn_weight[c] + layer.bn_bias[c]).max(T::zero());
            }
        }
        x = y;
    }
    GlobalFeature(
        (0..x.ncols())
            .map(|c| x.column(c).iter().fold(T::zero(), |m, v| m.max(*v)))
            .collect(),
    )
}
