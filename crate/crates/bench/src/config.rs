//! Run configuration, loadable from TOML. Every section is optional.

use std::path::Path;

use pnlk::fixedpoint::{AccumulatorMode, QFormat};
use pnlk::geometry::RotationMetric;
use pnlk::icp::IcpConfig;
use pnlk::lk::LkConfig;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub half_width: QFormat,
    pub accumulator: AccumulatorMode,
}

impl Default for QuantSection {
    fn default() -> Self {
        Self {
            half_width: QFormat::new(16).expect("16 is a valid half width"),
            accumulator: AccumulatorMode::PerOutput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub repetitions: usize,
    pub statistic: Statistic,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            repetitions: 3,
            statistic: Statistic::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSection {
    pub translation_bound: f64,
    pub n_points: usize,
    pub resampling: pnlk::data::Resampling,
}

impl Default for PairSection {
    fn default() -> Self {
        Self {
            translation_bound: 0.3,
            n_points: 1024,
            resampling: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lk: LkConfig,
    pub icp: IcpConfig,
    pub quant: QuantSection,
    pub rotation_metric: RotationMetric,
    pub timing: TimingSection,
    pub pair: PairSection,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(path.to_path_buf(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.lk.validate()?;
        self.icp.validate()?;
        if self.timing.repetitions == 0 {
            return Err(BenchError::Config("timing.repetitions must be at least 1".into()));
        }
        if self.pair.n_points == 0 {
            return Err(BenchError::Config("pair.n_points must be positive".into()));
        }
        Ok(())
    }
}
