//! Synthetic impression logs with a long-tailed, multi-peaked watch-time
//! marginal.
//!
//! Each item has a fixed duration drawn from a mixture of log-normal
//! components clamped to `[5, 300]` seconds. A latent engagement
//! `e = u_user + v_item + noise` shifts the log-normal watch-time draw, and
//! watch time is capped by the duration, which produces a completion peak
//! per duration mode. Features are noisy views of the user and item effects
//! plus distractor columns, so the latent engagement is only partially
//! observable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::impression::{Impression, NUM_AUX};
use crate::error::{Error, Result};

pub const MIN_DURATION_S: f64 = 5.0;
pub const MAX_DURATION_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationComponent {
    pub weight: f64,
    pub median_s: f64,
    pub log_sd: f64,
}

/// Label thresholds applied to generated watch time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxThresholds {
    /// `completion` when `y >= completion_ratio * d`.
    pub completion_ratio: f64,
    /// `effective_view` when `y >= min(d, effective_view_s)`.
    pub effective_view_s: f64,
    /// `long_view` when `y >= min(d, long_view_s)`.
    pub long_view_s: f64,
    /// `short_view` when `y < short_view_s`.
    pub short_view_s: f64,
    /// `negative_feedback` on a short view whose latent user-item affinity is
    /// below this value.
    pub negative_affinity: f64,
}

impl Default for AuxThresholds {
    fn default() -> Self {
        Self {
            completion_ratio: 0.95,
            effective_view_s: 7.0,
            long_view_s: 18.0,
            short_view_s: 3.0,
            negative_affinity: -0.5,
        }
    }
}

impl AuxThresholds {
    pub fn labels(&self, watch: f64, duration: f64, affinity: f64) -> [bool; NUM_AUX] {
        let short = watch < self.short_view_s;
        [
            watch >= self.completion_ratio * duration,
            watch >= duration.min(self.effective_view_s),
            watch >= duration.min(self.long_view_s),
            short,
            short && affinity < self.negative_affinity,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Total feature columns; the first three are informative.
    pub feature_dim: usize,
    pub user_sd: f64,
    pub item_sd: f64,
    /// Per-impression engagement noise.
    pub engagement_sd: f64,
    /// Noise on the informative feature columns.
    pub feature_noise_sd: f64,
    pub durations: Vec<DurationComponent>,
    /// Median fraction of the duration watched at zero engagement.
    pub watch_fraction: f64,
    /// Log-scale spread of watch time for the shortest and longest videos;
    /// interpolated linearly in `log d`.
    pub watch_log_sd_short: f64,
    pub watch_log_sd_long: f64,
    /// Probability that an impression is not played at all (`y = 0`).
    pub no_play_prob: f64,
    pub thresholds: AuxThresholds,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 3000,
            feature_dim: 8,
            user_sd: 0.5,
            item_sd: 0.5,
            engagement_sd: 0.4,
            feature_noise_sd: 0.3,
            durations: vec![
                DurationComponent {
                    weight: 0.55,
                    median_s: 15.0,
                    log_sd: 0.5,
                },
                DurationComponent {
                    weight: 0.30,
                    median_s: 60.0,
                    log_sd: 0.4,
                },
                DurationComponent {
                    weight: 0.15,
                    median_s: 180.0,
                    log_sd: 0.3,
                },
            ],
            watch_fraction: 0.35,
            watch_log_sd_short: 0.7,
            watch_log_sd_long: 1.1,
            no_play_prob: 0.03,
            thresholds: AuxThresholds::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("generator: {msg}")));
        if self.num_users == 0 || self.num_items == 0 {
            return bad("num_users and num_items must be positive");
        }
        if self.feature_dim < 3 {
            return bad("feature_dim must be at least 3");
        }
        let sds = [
            self.user_sd,
            self.item_sd,
            self.engagement_sd,
            self.feature_noise_sd,
            self.watch_log_sd_short,
            self.watch_log_sd_long,
        ];
        if sds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("standard deviations must be finite and nonnegative");
        }
        if self.durations.is_empty() {
            return bad("at least one duration component is required");
        }
        for c in &self.durations {
            if !(c.weight > 0.0 && c.median_s > 0.0 && c.log_sd >= 0.0) {
                return bad("duration components need weight > 0, median > 0, log_sd >= 0");
            }
        }
        if !(self.watch_fraction > 0.0 && self.watch_fraction.is_finite()) {
            return bad("watch_fraction must be positive");
        }
        if !(0.0..1.0).contains(&self.no_play_prob) {
            return bad("no_play_prob must lie in [0, 1)");
        }
        let t = &self.thresholds;
        if !(t.completion_ratio > 0.0 && t.completion_ratio <= 1.0) {
            return bad("completion_ratio must lie in (0, 1]");
        }
        if t.effective_view_s <= 0.0 || t.long_view_s <= 0.0 || t.short_view_s <= 0.0 {
            return bad("view thresholds must be positive");
        }
        Ok(())
    }

    fn watch_log_sd(&self, duration: f64) -> f64 {
        let span = (MAX_DURATION_S / MIN_DURATION_S).ln();
        let t = ((duration / MIN_DURATION_S).ln() / span).clamp(0.0, 1.0);
        self.watch_log_sd_short + t * (self.watch_log_sd_long - self.watch_log_sd_short)
    }
}

/// Generates `n` impressions. Identical `(n, seed, config)` give identical
/// output.
pub fn generate_synthetic(n: usize, seed: u64, config: &GeneratorConfig) -> Result<Vec<Impression>> {
    config.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let users: Vec<f64> = (0..config.num_users)
        .map(|_| config.user_sd * std_normal.sample(&mut rng))
        .collect();
    let total_weight: f64 = config.durations.iter().map(|c| c.weight).sum();
    let items: Vec<(f64, f64)> = (0..config.num_items)
        .map(|_| {
            let effect = config.item_sd * std_normal.sample(&mut rng);
            let mut pick = rng.random::<f64>() * total_weight;
            let mut comp = config.durations[config.durations.len() - 1];
            for c in &config.durations {
                if pick < c.weight {
                    comp = *c;
                    break;
                }
                pick -= c.weight;
            }
            let d = (comp.median_s * (comp.log_sd * std_normal.sample(&mut rng)).exp())
                .clamp(MIN_DURATION_S, MAX_DURATION_S);
            // Round to 0.1 s like logged durations.
            (effect, (d * 10.0).round() / 10.0)
        })
        .collect();

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(0..config.num_users);
        let i = rng.random_range(0..config.num_items);
        let (item_effect, duration) = items[i];
        let affinity = users[u] + item_effect;
        let engagement = affinity + config.engagement_sd * std_normal.sample(&mut rng);

        let watch = if rng.random::<f64>() < config.no_play_prob {
            0.0
        } else {
            let mu = (config.watch_fraction * duration).ln() + engagement;
            let draw = LogNormal::new(mu, config.watch_log_sd(duration))
                .expect("finite lognormal")
                .sample(&mut rng);
            ((draw.min(duration)) * 100.0).round() / 100.0
        };

        let mut features = Vec::with_capacity(config.feature_dim);
        features.push(users[u] + config.feature_noise_sd * std_normal.sample(&mut rng));
        features.push(item_effect + config.feature_noise_sd * std_normal.sample(&mut rng));
        features.push(affinity + config.feature_noise_sd * std_normal.sample(&mut rng));
        for _ in 3..config.feature_dim {
            features.push(std_normal.sample(&mut rng));
        }

        out.push(Impression {
            user_id: u as u64,
            item_id: i as u64,
            features,
            duration_s: duration,
            watch_time_s: watch,
            aux_labels: config.thresholds.labels(watch, duration, affinity),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn zero_rows_is_empty() {
        assert!(generate_synthetic(0, 1, &GeneratorConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(500, 42, &cfg).unwrap();
        let b = generate_synthetic(500, 42, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(500, 43, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_respect_invariants_and_labels() {
        let cfg = GeneratorConfig::default();
        for r in generate_synthetic(5000, 3, &cfg).unwrap() {
            assert!(r.is_valid());
            assert!(r.watch_time_s <= r.duration_s);
            assert!((MIN_DURATION_S..=MAX_DURATION_S).contains(&r.duration_s));
            let [completion, effective, long, short, negative] = r.aux_labels;
            assert_eq!(completion, r.watch_time_s >= 0.95 * r.duration_s);
            assert_eq!(effective, r.watch_time_s >= r.duration_s.min(7.0));
            assert_eq!(long, r.watch_time_s >= r.duration_s.min(18.0));
            assert_eq!(short, r.watch_time_s < 3.0);
            assert!(!negative || short);
        }
    }

    #[test]
    fn marginal_is_long_tailed() {
        let data = generate_synthetic(100_000, 11, &GeneratorConfig::default()).unwrap();
        let y: Vec<f64> = data.iter().map(|r| r.watch_time_s).collect();
        let skew = stats::skewness(&y);
        let m = stats::mean(&y);
        let s = stats::std_dev(&y);
        let tail = y.iter().filter(|&&v| v > m + 3.0 * s).count() as f64 / y.len() as f64;
        assert!(skew > 1.5, "skewness {skew}");
        assert!(tail > 0.005, "tail mass {tail}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = GeneratorConfig {
            no_play_prob: 1.5,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_synthetic(10, 0, &cfg), Err(Error::Config(_))));
    }
}
