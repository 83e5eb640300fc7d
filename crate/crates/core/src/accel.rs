//! Latency and resource model of the pipelined PointNet core.
//!
//! Every module is described by a [`HwModuleSpec`] whose cycle count is
//! `iterations · ii + depth`. Where `ii`/`depth` come from decides what the
//! number means, and each report carries that label:
//!
//! * [`LatencySource::Calibrated`]: looked up in a [`CalibrationProfile`].
//! * [`LatencySource::Analytic`]: inner loop unrolled by `B` and pipelined,
//!   `ii = ⌈K/B⌉`, `depth = ⌈log₂B⌉ + 1`.
//! * [`LatencySource::Unpipelined`]: no pipelining, so an FC layer takes
//!   exactly [`unrolled_iteration_count`] cycles.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pointnet::{FEATURE_DIM, LAYER_DIMS};

pub const DEFAULT_CLOCK_MHZ: f64 = 100.0;

const SHIPPED_PROFILE: &str = include_str!("../profiles/zcu104-32bit.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleKind {
    Fc,
    BnRelu,
    MaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencySource {
    Calibrated,
    Analytic,
    Unpipelined,
}

impl fmt::Display for LatencySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Calibrated => "calibrated",
            Self::Analytic => "analytic",
            Self::Unpipelined => "unpipelined",
        })
    }
}

/// Which cycle model [`CalibrationProfile::spec`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyModel {
    /// Profile entry when one matches, analytic otherwise.
    #[default]
    Calibrated,
    Analytic,
    Unpipelined,
}

/// Kind and dimensions of one module, without an unroll choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleShape {
    pub kind: ModuleKind,
    pub k: u32,
    pub l: u32,
}

impl ModuleShape {
    pub fn fc(k: u32, l: u32) -> Self {
        Self {
            kind: ModuleKind::Fc,
            k,
            l,
        }
    }
    pub fn bn_relu(k: u32) -> Self {
        Self {
            kind: ModuleKind::BnRelu,
            k,
            l: k,
        }
    }
    pub fn max_pool(k: u32) -> Self {
        Self {
            kind: ModuleKind::MaxPool,
            k,
            l: k,
        }
    }

    /// Iterations of the pipelined loop for unroll factor `b`.
    pub fn iterations(&self, b: u32) -> u64 {
        match self.kind {
            ModuleKind::Fc => self.l as u64,
            ModuleKind::BnRelu | ModuleKind::MaxPool => self.k.div_ceil(b) as u64,
        }
    }

    /// Number of multipliers per unroll lane.
    fn multipliers_per_lane(&self) -> u32 {
        match self.kind {
            ModuleKind::Fc | ModuleKind::BnRelu => 1,
            ModuleKind::MaxPool => 0,
        }
    }

    /// Parameter (or state) arrays as word counts; each is split into
    /// `unroll` banks.
    fn arrays(&self) -> Vec<(u64, bool)> {
        let (k, l) = (self.k as u64, self.l as u64);
        match self.kind {
            ModuleKind::Fc => vec![(k * l, true), (l, false)],
            ModuleKind::BnRelu => vec![(k, true), (k, true)],
            ModuleKind::MaxPool => vec![(k, true)],
        }
    }
}

impl fmt::Display for ModuleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModuleKind::Fc => write!(f, "FC({},{})", self.k, self.l),
            ModuleKind::BnRelu => write!(f, "BN-ReLU({})", self.k),
            ModuleKind::MaxPool => write!(f, "MaxPool({})", self.k),
        }
    }
}

/// The eleven module instances of the core in dataflow order.
pub fn pointnet_modules() -> Vec<ModuleShape> {
    let mut out = Vec::with_capacity(2 * LAYER_DIMS.len() + 1);
    for (k, l) in LAYER_DIMS {
        out.push(ModuleShape::fc(k as u32, l as u32));
        out.push(ModuleShape::bn_relu(l as u32));
    }
    out.push(ModuleShape::max_pool(FEATURE_DIM as u32));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwModuleSpec {
    pub shape: ModuleShape,
    pub unroll: u32,
    pub ii_cycles: u32,
    pub depth_cycles: u32,
    pub clock_mhz: f64,
    pub source: LatencySource,
}

impl HwModuleSpec {
    pub fn new(
        shape: ModuleShape,
        unroll: u32,
        ii_cycles: u32,
        depth_cycles: u32,
        clock_mhz: f64,
        source: LatencySource,
    ) -> Result<Self> {
        if shape.k == 0 || shape.l == 0 {
            return Err(invalid(format!("{shape} has a zero dimension")));
        }
        if unroll == 0 || unroll > shape.k {
            return Err(invalid(format!("unroll {unroll} outside 1..={} for {shape}", shape.k)));
        }
        if ii_cycles == 0 {
            return Err(invalid("initiation interval must be at least one cycle"));
        }
        if !(clock_mhz > 0.0 && clock_mhz.is_finite()) {
            return Err(invalid("clock must be positive"));
        }
        Ok(Self {
            shape,
            unroll,
            ii_cycles,
            depth_cycles,
            clock_mhz,
            source,
        })
    }

    /// Pipelined analytic estimate.
    pub fn analytic(shape: ModuleShape, unroll: u32, clock_mhz: f64) -> Result<Self> {
        let (ii, depth) = match shape.kind {
            ModuleKind::Fc => (shape.k.div_ceil(unroll.max(1)), ceil_log2(unroll) + 1),
            ModuleKind::BnRelu | ModuleKind::MaxPool => (1, 1),
        };
        Self::new(shape, unroll, ii, depth, clock_mhz, LatencySource::Analytic)
    }

    /// No pipelining: each adder-tree pass is serialized.
    pub fn unpipelined(shape: ModuleShape, unroll: u32, clock_mhz: f64) -> Result<Self> {
        let ii = match shape.kind {
            ModuleKind::Fc => shape.k.div_ceil(unroll.max(1)) + ceil_log2(unroll),
            ModuleKind::BnRelu | ModuleKind::MaxPool => 1,
        };
        Self::new(shape, unroll, ii, 0, clock_mhz, LatencySource::Unpipelined)
    }

    pub fn cycles(&self) -> u64 {
        self.shape.iterations(self.unroll) * self.ii_cycles as u64 + self.depth_cycles as u64
    }
}

fn ceil_log2(b: u32) -> u32 {
    if b <= 1 {
        0
    } else {
        32 - (b - 1).leading_zeros()
    }
}

/// Iterations of the unrolled FC loop nest: `L·(⌈K/B⌉ + ⌈log₂B⌉)`.
pub fn unrolled_iteration_count(k: u32, l: u32, b: u32) -> Result<u64> {
    if b == 0 || b > k {
        return Err(invalid(format!("unroll factor {b} outside 1..={k}")));
    }
    Ok(l as u64 * (k.div_ceil(b) + ceil_log2(b)) as u64)
}

/// Latency in microseconds.
pub fn module_latency(spec: &HwModuleSpec) -> f64 {
    spec.cycles() as f64 / spec.clock_mhz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub kind: ModuleKind,
    pub k: u32,
    pub l: u32,
    pub unroll: u32,
    pub ii: u32,
    pub depth: u32,
}

impl CalibrationEntry {
    pub fn shape(&self) -> ModuleShape {
        ModuleShape {
            kind: self.kind,
            k: self.k,
            l: self.l,
        }
    }
}

/// Fits `ii` and `depth` so that `iterations · ii + depth` reproduces a
/// measured latency, with `depth ≥ 1` and `ii` as large as possible.
pub fn fit_entry(shape: ModuleShape, unroll: u32, latency_us: f64, clock_mhz: f64) -> Result<CalibrationEntry> {
    if unroll == 0 || unroll > shape.k {
        return Err(invalid(format!("unroll {unroll} outside 1..={}", shape.k)));
    }
    let cycles = (latency_us * clock_mhz).round() as u64;
    let iters = shape.iterations(unroll);
    if cycles <= iters {
        return Err(invalid(format!(
            "{latency_us} µs is too short for {iters} iterations of {shape}"
        )));
    }
    let ii = (cycles - 1) / iters;
    Ok(CalibrationEntry {
        kind: shape.kind,
        k: shape.k,
        l: shape.l,
        unroll,
        ii: ii as u32,
        depth: (cycles - ii * iters) as u32,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceModel {
    /// Operand widths of one DSP slice multiplier.
    pub dsp_port_bits: [u32; 2],
    pub bram_half_bits: u64,
    pub ff_base: f64,
    pub ff_per_lane_bit: f64,
    pub lut_base: f64,
    pub lut_per_lane_bit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub name: String,
    pub clock_mhz: f64,
    pub word_bits: u32,
    #[serde(rename = "module")]
    pub modules: Vec<CalibrationEntry>,
    pub resources: ResourceModel,
}

impl CalibrationProfile {
    /// The profile bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED_PROFILE).expect("bundled profile parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    fn validate(&self) -> Result<()> {
        if !(self.clock_mhz > 0.0 && self.clock_mhz.is_finite()) {
            return Err(Error::Profile("clock_mhz must be positive".into()));
        }
        if self.word_bits == 0 || self.resources.dsp_port_bits.contains(&0) || self.resources.bram_half_bits == 0 {
            return Err(Error::Profile("widths must be positive".into()));
        }
        for e in &self.modules {
            HwModuleSpec::new(e.shape(), e.unroll, e.ii, e.depth, self.clock_mhz, LatencySource::Calibrated)
                .map_err(|err| Error::Profile(err.to_string()))?;
        }
        Ok(())
    }

    pub fn lookup(&self, shape: ModuleShape, unroll: u32) -> Option<&CalibrationEntry> {
        self.modules
            .iter()
            .find(|e| e.shape() == shape && e.unroll == unroll)
    }

    /// The unroll factor the profile was calibrated at for `shape`.
    pub fn calibrated_unroll(&self, shape: ModuleShape) -> Option<u32> {
        self.modules.iter().find(|e| e.shape() == shape).map(|e| e.unroll)
    }

    /// Unroll factors of the calibrated design for the whole chain.
    pub fn reference_unrolls(&self) -> Result<Vec<u32>> {
        pointnet_modules()
            .into_iter()
            .map(|s| {
                self.calibrated_unroll(s)
                    .ok_or_else(|| Error::Profile(format!("no entry for {s}")))
            })
            .collect()
    }

    pub fn spec(&self, shape: ModuleShape, unroll: u32, model: LatencyModel) -> Result<HwModuleSpec> {
        match model {
            LatencyModel::Calibrated => match self.lookup(shape, unroll) {
                Some(e) => HwModuleSpec::new(shape, unroll, e.ii, e.depth, self.clock_mhz, LatencySource::Calibrated),
                None => HwModuleSpec::analytic(shape, unroll, self.clock_mhz),
            },
            LatencyModel::Analytic => HwModuleSpec::analytic(shape, unroll, self.clock_mhz),
            LatencyModel::Unpipelined => HwModuleSpec::unpipelined(shape, unroll, self.clock_mhz),
        }
    }

    /// Specs for the full chain given one unroll factor per module.
    pub fn chain(&self, unrolls: &[u32], model: LatencyModel) -> Result<Vec<HwModuleSpec>> {
        let shapes = pointnet_modules();
        if unrolls.len() != shapes.len() {
            return Err(invalid(format!(
                "{} unroll factors for {} modules",
                unrolls.len(),
                shapes.len()
            )));
        }
        shapes
            .into_iter()
            .zip(unrolls)
            .map(|(s, &b)| self.spec(s, b, model))
            .collect()
    }

    pub fn resources(&self, specs: &[HwModuleSpec], word_bits: u32) -> ResourceEstimate {
        let r = &self.resources;
        let per_mult = word_bits.div_ceil(r.dsp_port_bits[0]) as u64 * word_bits.div_ceil(r.dsp_port_bits[1]) as u64;
        let mut est = ResourceEstimate::default();
        let mut lane_bits = 0u64;
        for s in specs {
            let b = s.unroll as u64;
            est.dsp += b * s.shape.multipliers_per_lane() as u64 * per_mult;
            lane_bits += b * word_bits as u64;
            for (words, banked) in s.shape.arrays() {
                let banks = if banked { b } else { 1 };
                let bits = words.div_ceil(banks) * word_bits as u64;
                est.bram += banks as f64 * bits.div_ceil(r.bram_half_bits) as f64 * 0.5;
            }
        }
        est.ff = r.ff_base + r.ff_per_lane_bit * lane_bits as f64;
        est.lut = r.lut_base + r.lut_per_lane_bit * lane_bits as f64;
        est
    }
}

/// Absolute resource counts. BRAM is in 36 Kb blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub bram: f64,
    pub dsp: u64,
    pub ff: f64,
    pub lut: f64,
}

impl ResourceEstimate {
    pub fn utilization(&self, board: &Board) -> Utilization {
        Utilization {
            bram: self.bram / board.bram,
            dsp: self.dsp as f64 / board.dsp,
            ff: self.ff / board.ff,
            lut: self.lut / board.lut,
        }
    }

    pub fn fits(&self, budget: &Board) -> bool {
        self.bram <= budget.bram && self.dsp as f64 <= budget.dsp && self.ff <= budget.ff && self.lut <= budget.lut
    }
}

/// Fractions of a board's capacity (1.0 = full).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub bram: f64,
    pub dsp: f64,
    pub ff: f64,
    pub lut: f64,
}

/// Resource capacities; also used as a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Board {
    pub name: String,
    pub bram: f64,
    pub dsp: f64,
    pub ff: f64,
    pub lut: f64,
}

impl Board {
    pub fn zcu104() -> Self {
        Self {
            name: "zcu104".into(),
            bram: 312.0,
            dsp: 1728.0,
            ff: 460800.0,
            lut: 230400.0,
        }
    }

    pub fn ultra96v2() -> Self {
        Self {
            name: "ultra96v2".into(),
            bram: 216.0,
            dsp: 360.0,
            ff: 141120.0,
            lut: 70560.0,
        }
    }

    pub fn unlimited() -> Self {
        Self {
            name: "unlimited".into(),
            bram: f64::INFINITY,
            dsp: f64::INFINITY,
            ff: f64::INFINITY,
            lut: f64::INFINITY,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "zcu104" => Ok(Self::zcu104()),
            "ultra96v2" => Ok(Self::ultra96v2()),
            "unlimited" => Ok(Self::unlimited()),
            other => Err(invalid(format!("unknown board {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleReport {
    pub module: String,
    pub unroll: u32,
    pub cycles: u64,
    pub latency_us: f64,
    pub source: LatencySource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub modules: Vec<ModuleReport>,
    /// Index of the slowest module; the earliest wins ties.
    pub bottleneck: usize,
    /// Steady-state time between consecutive points.
    pub interval_us: f64,
    /// Latency of one point through every module.
    pub fill_us: f64,
    pub n_points: usize,
    pub total_us: f64,
    pub resources: Option<ResourceEstimate>,
    pub utilization: Option<Utilization>,
}

impl PipelineReport {
    pub fn bottleneck_module(&self) -> &ModuleReport {
        &self.modules[self.bottleneck]
    }
}

fn module_reports(specs: &[HwModuleSpec]) -> Vec<ModuleReport> {
    specs
        .iter()
        .map(|s| ModuleReport {
            module: s.shape.to_string(),
            unroll: s.unroll,
            cycles: s.cycles(),
            latency_us: module_latency(s),
            source: s.source,
        })
        .collect()
}

/// Inter-layer pipelined schedule: `fill + (N − 1) · interval`.
pub fn pipeline_schedule(specs: &[HwModuleSpec], n_points: usize) -> Result<PipelineReport> {
    if specs.is_empty() {
        return Err(invalid("pipeline needs at least one module"));
    }
    if n_points == 0 {
        return Err(invalid("pipeline needs at least one point"));
    }
    let modules = module_reports(specs);
    let mut bottleneck = 0;
    for (i, m) in modules.iter().enumerate() {
        if m.latency_us > modules[bottleneck].latency_us {
            bottleneck = i;
        }
    }
    let interval_us = modules[bottleneck].latency_us;
    let fill_us: f64 = modules.iter().map(|m| m.latency_us).sum();
    Ok(PipelineReport {
        modules,
        bottleneck,
        interval_us,
        fill_us,
        n_points,
        total_us: fill_us + (n_points - 1) as f64 * interval_us,
        resources: None,
        utilization: None,
    })
}

/// Modules run back to back for every point, with no overlap.
pub fn sequential_schedule(specs: &[HwModuleSpec], n_points: usize) -> Result<PipelineReport> {
    let mut report = pipeline_schedule(specs, n_points)?;
    report.interval_us = report.fill_us;
    report.total_us = report.fill_us * n_points as f64;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignVariant {
    /// `B = 1` everywhere, no pipelining of any kind.
    Naive,
    /// Calibrated unroll factors, modules run back to back.
    Intra,
    /// Calibrated unroll factors with the inter-layer pipeline.
    InterIntra,
}

impl fmt::Display for DesignVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::Intra => "intra",
            Self::InterIntra => "inter-intra",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub design: DesignVariant,
    pub report: PipelineReport,
}

/// The three design variants evaluated for `n_points` on `board`.
pub fn ablation(profile: &CalibrationProfile, n_points: usize, board: &Board) -> Result<Vec<AblationRow>> {
    let chain_len = pointnet_modules().len();
    let reference = profile.reference_unrolls()?;
    let variants = [
        (DesignVariant::Naive, vec![1; chain_len], LatencyModel::Unpipelined, false),
        (DesignVariant::Intra, reference.clone(), LatencyModel::Calibrated, false),
        (DesignVariant::InterIntra, reference, LatencyModel::Calibrated, true),
    ];
    variants
        .into_iter()
        .map(|(design, unrolls, model, pipelined)| {
            let specs = profile.chain(&unrolls, model)?;
            let mut report = if pipelined {
                pipeline_schedule(&specs, n_points)?
            } else {
                sequential_schedule(&specs, n_points)?
            };
            let res = profile.resources(&specs, profile.word_bits);
            report.utilization = Some(res.utilization(board));
            report.resources = Some(res);
            Ok(AblationRow { design, report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedDesign {
    pub unrolls: Vec<u32>,
    pub report: PipelineReport,
}

/// Candidate unroll factors for `shape`: powers of two up to `K`, plus `K`.
pub fn unroll_candidates(shape: ModuleShape) -> Vec<u32> {
    let mut out: Vec<u32> = (0..32).map(|i| 1u32 << i).take_while(|b| *b <= shape.k).collect();
    if !out.contains(&shape.k) {
        out.push(shape.k);
    }
    out
}

/// Enumerates every combination in `space` (one candidate list per module of
/// the chain), keeps the ones that fit `budget`, and ranks them by pipelined
/// total latency for `n_points`, then DSP usage, then unroll factors.
pub fn explore_design(
    profile: &CalibrationProfile,
    space: &[Vec<u32>],
    budget: &Board,
    n_points: usize,
    model: LatencyModel,
) -> Result<Vec<RankedDesign>> {
    let shapes = pointnet_modules();
    if space.len() != shapes.len() {
        return Err(invalid(format!("space has {} axes for {} modules", space.len(), shapes.len())));
    }
    if space.iter().any(|c| c.is_empty()) {
        return Err(invalid("every module needs at least one candidate"));
    }
    let options: Vec<Vec<HwModuleSpec>> = shapes
        .iter()
        .zip(space)
        .map(|(s, cands)| cands.iter().map(|&b| profile.spec(*s, b, model)).collect())
        .collect::<Result<_>>()?;

    let mut ranked = Vec::new();
    let mut idx = vec![0usize; options.len()];
    loop {
        let specs: Vec<HwModuleSpec> = idx.iter().zip(&options).map(|(&i, o)| o[i]).collect();
        let res = profile.resources(&specs, profile.word_bits);
        if res.fits(budget) {
            let mut report = pipeline_schedule(&specs, n_points)?;
            report.resources = Some(res);
            ranked.push(RankedDesign {
                unrolls: specs.iter().map(|s| s.unroll).collect(),
                report,
            });
        }
        let mut axis = 0;
        loop {
            if axis == idx.len() {
                ranked.sort_by(|a, b| {
                    a.report
                        .total_us
                        .total_cmp(&b.report.total_us)
                        .then(a.report.resources.map(|r| r.dsp).cmp(&b.report.resources.map(|r| r.dsp)))
                        .then(a.unrolls.cmp(&b.unrolls))
                });
                return Ok(ranked);
            }
            idx[axis] += 1;
            if idx[axis] < options[axis].len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
