//! CSV row types. Each table carries a schema tag in its file name
//! (`*.v1.csv`) and the column order below is part of that schema.

use std::fmt;
use std::io::Write;
use std::path::Path;

use pnlk::lk::PhaseTimings;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PointnetlkFloat,
    PointnetlkQuant,
    Icp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::PointnetlkFloat, Method::PointnetlkQuant, Method::Icp];

    pub fn needs_weights(self) -> bool {
        self != Method::Icp
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PointnetlkFloat => "pointnetlk-float",
            Self::PointnetlkQuant => "pointnetlk-quant",
            Self::Icp => "icp",
        })
    }
}

/// One registration. Error columns are empty when no ground truth exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    /// `Qn` half width for the quantized method, empty otherwise.
    pub qformat: Option<u32>,
    pub n_points: usize,
    pub angle_deg: Option<f64>,
    pub seed: u64,
    pub rot_error_deg: Option<f64>,
    pub trans_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub total_s: f64,
    pub feature_s: f64,
    pub jacobian_s: f64,
    pub correspondence_s: f64,
    pub solve_s: f64,
    pub transform_s: f64,
}

/// Columns holding wall-clock measurements; everything else is a pure
/// function of flags and seed.
pub const TIMING_COLUMNS: [&str; 6] = ["total_s", "feature_s", "jacobian_s", "correspondence_s", "solve_s", "transform_s"];

impl RunRecord {
    pub fn set_timings(&mut self, t: &PhaseTimings) {
        self.total_s = t.total.as_secs_f64();
        self.feature_s = t.feature.as_secs_f64();
        self.jacobian_s = t.jacobian.as_secs_f64();
        self.correspondence_s = t.correspondence.as_secs_f64();
        self.solve_s = t.solve.as_secs_f64();
        self.transform_s = t.transform.as_secs_f64();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub angle_deg: f64,
    pub models: usize,
    pub trials: usize,
    /// Mean over models of each model's mean over trials.
    pub mean_rot_error_deg: f64,
    pub mean_trans_error: f64,
    pub mean_iterations: f64,
    pub converged_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub method: Method,
    pub n_points: usize,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub method: Method,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase: String,
    pub seconds: f64,
    pub share_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRow {
    pub half_width: u32,
    pub total_bits: u32,
    pub angle_deg: f64,
    pub models: usize,
    /// Mean absolute global-feature difference from the float network.
    pub mean_feature_dev: f64,
    pub mean_rot_error_deg: f64,
    pub mean_trans_error: f64,
    pub clamps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub module: String,
    pub unroll: u32,
    pub cycles: u64,
    pub latency_us: f64,
    pub source: String,
    pub bottleneck: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub design: String,
    pub n_points: usize,
    pub interval_us: f64,
    pub fill_us: f64,
    pub total_us: f64,
    pub speedup_vs_naive: f64,
    pub dsp: u64,
    pub bram: f64,
    pub ff: f64,
    pub lut: f64,
    pub dsp_pct: f64,
    pub bram_pct: f64,
    pub ff_pct: f64,
    pub lut_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRow {
    pub rank: usize,
    /// Unroll factors along the module chain, joined with `-`.
    pub unrolls: String,
    pub interval_us: f64,
    pub total_us: f64,
    pub dsp: u64,
    pub bram: f64,
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(dir.to_path_buf(), e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::Io(path.to_path_buf(), e))?;
    Ok(())
}

/// Header plus rows, for printing to a terminal or pipe.
pub fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

pub fn print_csv<R: Serialize>(out: &mut dyn Write, rows: &[R]) -> Result<()> {
    out.write_all(csv_string(rows)?.as_bytes())
        .map_err(|e| BenchError::Io("<stdout>".into(), e))
}
