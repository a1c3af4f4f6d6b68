//! A synthetic first stage whose bias is known by construction.
//!
//! `ŷ0` is the observed watch time scaled by a piecewise-constant factor of
//! watch time and duration, times log-normal noise with unit median. The
//! auxiliary signals are noisy encodings of the true labels, and the common
//! representation is a fixed random projection of the impression features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::output::{FirstStage, FirstStageOutput};
use crate::data::{Impression, NUM_AUX};
use crate::error::{Error, Result};
use crate::numeric::graph::{softplus, softplus_inv};

/// Piecewise-constant multiplicative bias. `watch_factors[i]` applies on
/// `[watch_edges[i-1], watch_edges[i])`, and likewise for durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasProfile {
    pub watch_edges: Vec<f64>,
    pub watch_factors: Vec<f64>,
    #[serde(default)]
    pub duration_edges: Vec<f64>,
    #[serde(default = "one")]
    pub duration_factors: Vec<f64>,
}

fn one() -> Vec<f64> {
    vec![1.0]
}

fn piece(edges: &[f64], factors: &[f64], v: f64) -> f64 {
    factors[edges.partition_point(|&e| e <= v)]
}

impl BiasProfile {
    pub fn identity() -> Self {
        Self {
            watch_edges: Vec::new(),
            watch_factors: vec![1.0],
            duration_edges: Vec::new(),
            duration_factors: vec![1.0],
        }
    }

    /// Short views overestimated, long views underestimated.
    pub fn short_over_long_under() -> Self {
        Self {
            watch_edges: vec![3.0, 10.0, 30.0, 60.0],
            watch_factors: vec![1.6, 1.3, 1.0, 0.75, 0.55],
            duration_edges: Vec::new(),
            duration_factors: vec![1.0],
        }
    }

    /// Watch-time bias of [`Self::short_over_long_under`] plus a duration
    /// bias that overestimates short videos and underestimates long ones.
    /// Call [`Self::balanced`] to make the aggregate ratio one.
    pub fn pseudo_balance() -> Self {
        Self {
            duration_edges: vec![30.0, 100.0],
            duration_factors: vec![1.15, 1.0, 0.8],
            ..Self::short_over_long_under()
        }
    }

    /// Duration-only underestimation that grows past the given duration
    /// quantiles: factor 1 below `q80`, 0.7 up to `q90`, 0.5 beyond.
    pub fn long_duration(q80: f64, q90: f64) -> Self {
        Self {
            watch_edges: Vec::new(),
            watch_factors: vec![1.0],
            duration_edges: vec![q80, q90],
            duration_factors: vec![1.0, 0.7, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |edges: &[f64], factors: &[f64], what: &str| -> Result<()> {
            if factors.len() != edges.len() + 1 {
                return Err(Error::Config(format!(
                    "{what}: {} factors need {} edges, got {}",
                    factors.len(),
                    factors.len().saturating_sub(1),
                    edges.len()
                )));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{what}: edges must be strictly increasing")));
            }
            if let Some(f) = factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
                return Err(Error::Config(format!("{what}: bias factor must be positive, got {f}")));
            }
            Ok(())
        };
        check(&self.watch_edges, &self.watch_factors, "watch-time bias")?;
        check(&self.duration_edges, &self.duration_factors, "duration bias")
    }

    pub fn factor(&self, watch: f64, duration: f64) -> f64 {
        piece(&self.watch_edges, &self.watch_factors, watch)
            * piece(&self.duration_edges, &self.duration_factors, duration)
    }

    /// Rescales every watch-time factor so that the expected aggregate ratio
    /// `mean(ŷ0) / mean(y)` on `data` is one under noise of log-sd
    /// `noise_sd`.
    pub fn balanced(&self, data: &[Impression], noise_sd: f64) -> Result<Self> {
        self.validate()?;
        let total: f64 = data.iter().map(|r| r.watch_time_s).sum();
        let biased: f64 = data
            .iter()
            .map(|r| self.factor(r.watch_time_s, r.duration_s) * r.watch_time_s)
            .sum();
        if total <= 0.0 || biased <= 0.0 {
            return Err(Error::Data("cannot balance a bias profile on zero watch time".into()));
        }
        let scale = total / (biased * (0.5 * noise_sd * noise_sd).exp());
        let mut out = self.clone();
        out.watch_factors.iter_mut().for_each(|f| *f *= scale);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub profile: BiasProfile,
    /// Log-sd of the multiplicative noise on `ŷ0`.
    pub noise_sd: f64,
    /// Lower bound on `ŷ0` before the softplus round trip.
    pub floor: f64,
    /// Auxiliary logits are `±logit_scale` plus noise.
    pub logit_scale: f64,
    pub logit_noise_sd: f64,
    pub play_noise_sd: f64,
    pub rep_dim: usize,
    pub common_dim: usize,
    pub rep_noise_sd: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            profile: BiasProfile::short_over_long_under(),
            noise_sd: 0.3,
            floor: 1e-3,
            logit_scale: 1.5,
            logit_noise_sd: 1.0,
            play_noise_sd: 0.5,
            rep_dim: 8,
            common_dim: 16,
            rep_noise_sd: 0.5,
            seed: 0,
        }
    }
}

/// Stateless oracle first stage; emission is a pure function of the
/// configuration and the impressions.
#[derive(Debug, Clone)]
pub struct BiasedOracle {
    pub config: OracleConfig,
    directions: Vec<Vec<f64>>,
}

impl BiasedOracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.profile.validate()?;
        if !(config.floor > 0.0) || config.noise_sd < 0.0 {
            return Err(Error::Config("oracle needs floor > 0 and noise_sd >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0a5e_ed01);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let directions = (0..NUM_AUX)
            .map(|_| (0..config.rep_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Ok(Self {
            config,
            directions,
        })
    }

    fn projection(&self, feature_dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0xc0_ffee);
        let scale = 1.0 / (feature_dim.max(1) as f64).sqrt();
        (0..feature_dim * self.config.common_dim)
            .map(|_| scale * rng.random_range(-1.7..1.7))
            .collect()
    }
}

impl FirstStage for BiasedOracle {
    fn emit(&self, data: &[Impression]) -> Result<Vec<FirstStageOutput>> {
        let cfg = &self.config;
        let feature_dim = data.first().map_or(0, |r| r.features.len());
        let proj = self.projection(feature_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::with_capacity(data.len());
        for r in data {
            let y = r.watch_time_s;
            let noise = (cfg.noise_sd * normal.sample(&mut rng)).exp();
            let raw = (cfg.profile.factor(y, r.duration_s) * y * noise).max(cfg.floor);
            let l0 = softplus_inv(raw);
            let mut aux_logits = [0.0; NUM_AUX];
            let mut tower_reps = Vec::with_capacity(NUM_AUX);
            for m in 0..NUM_AUX {
                let sign = if r.aux_labels[m] { 1.0 } else { -1.0 };
                aux_logits[m] = sign * cfg.logit_scale + cfg.logit_noise_sd * normal.sample(&mut rng);
                tower_reps.push(
                    self.directions[m]
                        .iter()
                        .map(|d| sign * d + cfg.rep_noise_sd * normal.sample(&mut rng))
                        .collect(),
                );
            }
            let play_logit = y.ln_1p() + cfg.play_noise_sd * normal.sample(&mut rng);
            let common_rep = (0..cfg.common_dim)
                .map(|k| {
                    let dot: f64 = r
                        .features
                        .iter()
                        .enumerate()
                        .map(|(j, x)| x * proj[j * cfg.common_dim + k])
                        .sum();
                    dot.tanh() + cfg.rep_noise_sd * normal.sample(&mut rng)
                })
                .collect();
            out.push(FirstStageOutput {
                y_hat0: softplus(l0),
                l0,
                play_logit,
                aux_logits,
                tower_reps,
                common_rep,
            });
        }
        Ok(out)
    }
}

/// Convenience wrapper around [`BiasedOracle`].
pub fn biased_oracle_first_stage(data: &[Impression], config: &OracleConfig) -> Result<Vec<FirstStageOutput>> {
    BiasedOracle::new(config.clone())?.emit(data)
}
