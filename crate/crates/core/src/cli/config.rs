//! The run configuration file.
//!
//! Every section has documented defaults and unknown keys are rejected. The
//! top-level `seed` is the master seed: resolving a config copies it into
//! every component seed (data generation, split, first stage, oracle,
//! correction training and evaluation sampling).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BucketMode, CsvSchema, GeneratorConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, LongTailConfig, OracleRiskConfig, TailDistribution};
use crate::first_stage::{BiasProfile, FirstStageHyper, OracleConfig};
use crate::training::{TrainConfig, Variant};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "DADF_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    pub seed: u64,
    pub variant: Variant,
    pub output: OutputConfig,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub bucketing: BucketingConfig,
    pub first_stage: FirstStageConfig,
    pub dadf: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub appendix: AppendixConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_name: "default".into(),
            seed: 0,
            variant: Variant::Full,
            output: OutputConfig::default(),
            data: DataConfig::default(),
            split: SplitSpec::default(),
            bucketing: BucketingConfig::default(),
            first_stage: FirstStageConfig::default(),
            dadf: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            appendix: AppendixConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Parent of run directories. Overridden by `DADF_OUT_ROOT`.
    pub root: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { root: "runs".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic sample count.
    pub n: usize,
    pub generator: GeneratorConfig,
    /// Input file when `source = "csv"`.
    pub csv_path: Option<PathBuf>,
    pub schema: CsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n: 50_000,
            generator: GeneratorConfig::default(),
            csv_path: None,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketingConfig {
    pub mode: BucketMode,
    pub k: usize,
    /// Interior boundaries for `mode = "fixed"`.
    pub boundaries: Vec<f64>,
}

impl Default for BucketingConfig {
    fn default() -> Self {
        Self {
            mode: BucketMode::EqualFrequency,
            k: 4,
            boundaries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStageKind {
    Vr,
    Wlr,
    /// Synthetic biased oracle; no training.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstStageConfig {
    pub backbone: FirstStageKind,
    pub hyper: FirstStageHyper,
    pub oracle: OracleConfig,
    /// Rescale the oracle's watch-time factors on the training split so the
    /// aggregate ratio is one.
    pub balance_oracle: bool,
}

impl Default for FirstStageConfig {
    fn default() -> Self {
        Self {
            backbone: FirstStageKind::Vr,
            hyper: FirstStageHyper::default(),
            oracle: OracleConfig {
                profile: BiasProfile::pseudo_balance(),
                noise_sd: 0.6,
                ..OracleConfig::default()
            },
            balance_oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { ks: vec![2, 3, 4, 6, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendixConfig {
    pub long_tail: LongTailConfig,
    pub exponential_control: LongTailConfig,
    pub oracle_risk: OracleRiskConfig,
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self {
            long_tail: LongTailConfig::default(),
            exponential_control: LongTailConfig {
                distribution: TailDistribution::Exponential { theta: 1.0 },
                scale_sd: 0.0,
                t_grid: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                ..LongTailConfig::default()
            },
            oracle_risk: OracleRiskConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies overrides, propagates the master seed and validates.
    pub fn resolve(mut self, seed: Option<u64>, variant: Option<Variant>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(v) = variant {
            self.variant = v;
        }
        let s = self.seed;
        self.split.seed = s;
        self.first_stage.hyper.seed = s;
        self.first_stage.oracle.seed = s;
        self.dadf.seed = s;
        self.eval.seed = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::Config("run_name must be a non-empty plain name".into()));
        }
        self.data.generator.validate()?;
        if self.data.source == DataSource::Synthetic && self.data.n < 10 {
            return Err(Error::Config("data.n must be at least 10".into()));
        }
        if self.data.source == DataSource::Csv && self.data.csv_path.is_none() {
            return Err(Error::Config("data.source = \"csv\" needs data.csv_path".into()));
        }
        self.split.validate()?;
        match self.bucketing.mode {
            BucketMode::EqualFrequency if self.bucketing.k == 0 => {
                return Err(Error::Config("bucketing.k must be at least 1".into()))
            }
            BucketMode::Fixed if self.bucketing.boundaries.windows(2).any(|w| w[0] >= w[1]) => {
                return Err(Error::Config("bucketing.boundaries must be strictly increasing".into()))
            }
            _ => {}
        }
        self.first_stage.hyper.validate()?;
        self.first_stage.oracle.profile.validate()?;
        self.dadf.validate()?;
        if self.sweep.ks.is_empty() || self.sweep.ks.contains(&0) {
            return Err(Error::Config("sweep.ks must be non-empty bucket counts >= 1".into()));
        }
        Ok(())
    }

    /// Bucket count used for naming artifacts.
    pub fn k(&self) -> usize {
        match self.bucketing.mode {
            BucketMode::EqualFrequency => self.bucketing.k,
            BucketMode::Fixed => self.bucketing.boundaries.len() + 1,
        }
    }
}
