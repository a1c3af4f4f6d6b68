//! Controlled synthetic benchmarks built on the biased oracle first stage.
//!
//! * pseudo-balance: watch-time and duration biases in opposite directions,
//!   rescaled so the aggregate prediction-to-observation ratio is one;
//! * long-duration: underestimation that grows in the top duration
//!   quantiles, with groups aligned to those quantiles.

use serde::{Deserialize, Serialize};

use crate::correction::DadfModel;
use crate::data::{fit_bucketing, generate_synthetic, split, BucketMode, Bucketing, GeneratorConfig, Splits, SplitSpec};
use crate::error::Result;
use crate::eval::{mae, xauc};
use crate::first_stage::{BiasProfile, BiasedOracle, FirstStage, FirstStageOutput, OracleConfig};
use crate::stats;
use crate::training::{train_variant, TrainConfig, TrainData, TrainOutcome, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub seed: u64,
    /// Log-sd of the oracle's multiplicative noise.
    pub noise_sd: f64,
    /// Equal-frequency groups for the pseudo-balance benchmark.
    pub k: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n: 50_000,
            seed: 0,
            noise_sd: 0.6,
            k: 4,
        }
    }
}

pub struct Benchmark {
    pub splits: Splits,
    /// Oracle signals for train, val and test.
    pub outputs: [Vec<FirstStageOutput>; 3],
    pub bucketing: Bucketing,
    pub oracle: OracleConfig,
}

/// Test-split scores of one trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub mae: f64,
    pub xauc: f64,
}

fn generate(cfg: &BenchmarkConfig) -> Result<Splits> {
    let gen = GeneratorConfig {
        no_play_prob: 0.0,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(cfg.n, cfg.seed, &gen)?;
    split(
        &data,
        &SplitSpec {
            seed: cfg.seed,
            ..SplitSpec::default()
        },
    )
}

fn assemble(splits: Splits, oracle: OracleConfig, bucketing: Bucketing) -> Result<Benchmark> {
    let o = BiasedOracle::new(oracle.clone())?;
    let outputs = [o.emit(&splits.train)?, o.emit(&splits.val)?, o.emit(&splits.test)?];
    Ok(Benchmark {
        splits,
        outputs,
        bucketing,
        oracle,
    })
}

pub fn pseudo_balance(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    let splits = generate(cfg)?;
    let profile = BiasProfile::pseudo_balance().balanced(&splits.train, cfg.noise_sd)?;
    let d: Vec<f64> = splits.train.iter().map(|r| r.duration_s).collect();
    let bucketing = fit_bucketing(&d, cfg.k, BucketMode::EqualFrequency, None)?;
    let oracle = OracleConfig {
        profile,
        noise_sd: cfg.noise_sd,
        seed: cfg.seed,
        ..OracleConfig::default()
    };
    assemble(splits, oracle, bucketing)
}

/// Groups are fixed at the training-duration quantiles 0.5, 0.8 and 0.9.
/// The auxiliary signals are weak here so that the duration bias dominates
/// the correctable error.
pub fn long_duration(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    let splits = generate(cfg)?;
    let d: Vec<f64> = splits.train.iter().map(|r| r.duration_s).collect();
    let (q50, q80, q90) = (stats::quantile(&d, 0.5), stats::quantile(&d, 0.8), stats::quantile(&d, 0.9));
    let bucketing = Bucketing::fixed(vec![q50, q80, q90])?;
    let oracle = OracleConfig {
        profile: BiasProfile::long_duration(q80, q90),
        noise_sd: cfg.noise_sd,
        seed: cfg.seed,
        logit_noise_sd: 3.0,
        play_noise_sd: 3.0,
        rep_noise_sd: 2.0,
        ..OracleConfig::default()
    };
    assemble(splits, oracle, bucketing)
}

impl Benchmark {
    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.splits.train,
            train_out: &self.outputs[0],
            val: &self.splits.val,
            val_out: &self.outputs[1],
        }
    }

    pub fn test_labels(&self) -> Vec<f64> {
        self.splits.test.iter().map(|r| r.watch_time_s).collect()
    }

    pub fn base_predictions(&self) -> Vec<f64> {
        self.outputs[2].iter().map(|o| o.y_hat0).collect()
    }

    pub fn predictions(&self, model: &DadfModel) -> Result<Vec<f64>> {
        Ok(model
            .predict(&self.splits.test, &self.outputs[2])?
            .iter()
            .map(|p| p.y_hat)
            .collect())
    }

    pub fn base_score(&self) -> Result<(f64, f64)> {
        let y = self.test_labels();
        let p = self.base_predictions();
        Ok((mae(&y, &p)?, xauc(&y, &p, None, 0)?.value))
    }

    pub fn train(&self, variant: Variant, cfg: &TrainConfig) -> Result<TrainOutcome> {
        train_variant(variant, &self.train_data(), &self.bucketing, cfg)
    }

    pub fn score(&self, outcome: &TrainOutcome) -> Result<VariantScore> {
        let y = self.test_labels();
        let p = self.predictions(&outcome.model)?;
        Ok(VariantScore {
            variant: outcome.variant,
            mae: mae(&y, &p)?,
            xauc: xauc(&y, &p, None, 0)?.value,
        })
    }
}
