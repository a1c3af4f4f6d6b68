//! Monte-Carlo validators for the two structural claims behind the method:
//! ratio factors of long-tailed targets stay long-tailed, and group-wise
//! conditioning never raises the oracle squared risk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exceedances needed at a grid point before its survival ratio is trusted.
pub const MIN_EXCEEDANCES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailDistribution {
    LogNormal { mu: f64, sigma: f64 },
    Exponential { theta: f64 },
}

impl TailDistribution {
    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            TailDistribution::LogNormal { mu, sigma } => {
                if t <= 0.0 {
                    1.0
                } else {
                    0.5 * libm::erfc((t.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
                }
            }
            TailDistribution::Exponential { theta } => (-t.max(0.0) / theta).exp(),
        }
    }

    /// `lim F̄(t + a) / F̄(t)` as `t → ∞`.
    pub fn limit_ratio(&self, a: f64) -> f64 {
        match *self {
            TailDistribution::LogNormal { .. } => 1.0,
            TailDistribution::Exponential { theta } => (-a / theta).exp(),
        }
    }

    fn sampler(&self) -> Result<Box<dyn Fn(&mut ChaCha8Rng) -> f64>> {
        let bad = |e: String| Error::Config(format!("tail distribution: {e}"));
        Ok(match *self {
            TailDistribution::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).map_err(|e| bad(e.to_string()))?;
                Box::new(move |r| d.sample(r))
            }
            TailDistribution::Exponential { theta } => {
                let d = Exp::new(1.0 / theta).map_err(|e| bad(e.to_string()))?;
                Box::new(move |r| d.sample(r))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongTailConfig {
    pub n: usize,
    pub seed: u64,
    pub distribution: TailDistribution,
    /// `g(X) = exp(scale_sd · N(0, 1))`; zero gives `g ≡ 1`.
    pub scale_sd: f64,
    pub shifts: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub tolerance: f64,
}

impl Default for LongTailConfig {
    fn default() -> Self {
        Self {
            n: 1_000_000,
            seed: 0,
            distribution: TailDistribution::LogNormal { mu: 0.0, sigma: 1.0 },
            scale_sd: 0.5,
            shifts: vec![1.0],
            t_grid: (1..=8).map(|k| (0.5 * f64::from(k)).exp()).collect(),
            tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub a: f64,
    pub exceed_y: usize,
    pub ratio_y: Option<f64>,
    pub exact_ratio_y: f64,
    pub exceed_r: usize,
    pub ratio_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftVerdict {
    pub a: f64,
    /// Ratio at the largest grid point.
    pub last_ratio_y: Option<f64>,
    pub last_ratio_r: Option<f64>,
    pub limit_ratio: f64,
    pub y_converges: bool,
    pub r_converges: bool,
    /// Last-point ratio of `Y` within tolerance of the closed-form limit.
    pub matches_limit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailReport {
    pub config: LongTailConfig,
    pub points: Vec<SurvivalPoint>,
    pub verdicts: Vec<ShiftVerdict>,
    /// Tolerance actually applied; wider than configured when flagged.
    pub tolerance: f64,
    /// Fewer than [`MIN_EXCEEDANCES`] samples beyond the largest grid point.
    pub thin_tail: bool,
    /// Every shift converges to one for both `Y` and `R`.
    pub long_tailed: bool,
}

fn exceed(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

/// Empirical survival ratios `F̄(t + a) / F̄(t)` of `Y` and of
/// `R = Y / g(X)` on a grid.
pub fn check_long_tail_inheritance(cfg: &LongTailConfig) -> Result<LongTailReport> {
    if cfg.n == 0 || cfg.t_grid.is_empty() || cfg.shifts.is_empty() {
        return Err(Error::Config("long-tail check needs n > 0, a grid and shifts".into()));
    }
    if cfg.t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("t grid must be strictly increasing".into()));
    }
    let draw = cfg.distribution.sampler()?;
    let scale = Normal::new(0.0, cfg.scale_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ys = Vec::with_capacity(cfg.n);
    let mut rs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let y = draw(&mut rng);
        let g = scale.sample(&mut rng).exp();
        ys.push(y);
        rs.push(y / g);
    }
    ys.sort_by(f64::total_cmp);
    rs.sort_by(f64::total_cmp);
    let last_t = *cfg.t_grid.last().expect("non-empty grid");
    let thin_tail = exceed(&ys, last_t) < MIN_EXCEEDANCES || exceed(&rs, last_t) < MIN_EXCEEDANCES;
    let tolerance = if thin_tail { 2.0 * cfg.tolerance } else { cfg.tolerance };
    let dist = cfg.distribution;
    let survival_ratio = |sorted: &[f64], t: f64, a: f64| {
        let base = exceed(sorted, t);
        (base > 0).then(|| exceed(sorted, t + a) as f64 / base as f64)
    };
    let mut points = Vec::new();
    let mut verdicts = Vec::new();
    for &a in &cfg.shifts {
        for &t in &cfg.t_grid {
            points.push(SurvivalPoint {
                t,
                a,
                exceed_y: exceed(&ys, t),
                ratio_y: survival_ratio(&ys, t, a),
                exact_ratio_y: dist.survival(t + a) / dist.survival(t),
                exceed_r: exceed(&rs, t),
                ratio_r: survival_ratio(&rs, t, a),
            });
        }
        let last = points.last().expect("grid point");
        let near = |v: Option<f64>, target: f64| v.is_some_and(|v| (v - target).abs() <= tolerance);
        let limit = dist.limit_ratio(a);
        verdicts.push(ShiftVerdict {
            a,
            last_ratio_y: last.ratio_y,
            last_ratio_r: last.ratio_r,
            limit_ratio: limit,
            y_converges: near(last.ratio_y, 1.0),
            r_converges: near(last.ratio_r, 1.0),
            matches_limit: near(last.ratio_y, limit),
        });
    }
    let long_tailed = verdicts.iter().all(|v| v.y_converges && v.r_converges);
    Ok(LongTailReport {
        config: cfg.clone(),
        points,
        verdicts,
        tolerance,
        thin_tail,
        long_tailed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub prob: f64,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleRiskConfig {
    pub groups: Vec<GroupSpec>,
    pub n: usize,
    pub seed: u64,
    /// Relative tolerance on the gap against `Var(E[U | G])`.
    pub rel_tolerance: f64,
}

impl Default for OracleRiskConfig {
    fn default() -> Self {
        Self {
            groups: vec![
                GroupSpec {
                    prob: 0.5,
                    mean: 0.0,
                    var: 1.0,
                },
                GroupSpec {
                    prob: 0.5,
                    mean: 2.0,
                    var: 1.0,
                },
            ],
            n: 100_000,
            seed: 0,
            rel_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRiskReport {
    /// Empirical risk of the best global constant.
    pub r0: f64,
    /// Empirical risk of the best per-group constants.
    pub rg: f64,
    pub gap: f64,
    /// `Var(U)` from the configuration.
    pub expected_r0: f64,
    /// `E[Var(U | G)]` from the configuration.
    pub expected_rg: f64,
    /// `Var(E[U | G])` from the configuration.
    pub expected_gap: f64,
    pub dominance_holds: bool,
    pub gap_matches: bool,
}

/// Samples `(G, U)`, fits the optimal global and per-group constants and
/// compares their empirical squared risks.
pub fn check_oracle_risk(cfg: &OracleRiskConfig) -> Result<OracleRiskReport> {
    if cfg.groups.len() < 2 || cfg.n == 0 {
        return Err(Error::Config("oracle-risk check needs at least two groups and n > 0".into()));
    }
    if cfg.groups.iter().any(|g| !(g.prob > 0.0 && g.var >= 0.0)) {
        return Err(Error::Config("group probabilities must be positive and variances nonnegative".into()));
    }
    let total: f64 = cfg.groups.iter().map(|g| g.prob).sum();
    let probs: Vec<f64> = cfg.groups.iter().map(|g| g.prob / total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = cfg.groups.len();
    let mut gs = Vec::with_capacity(cfg.n);
    let mut us = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut u: f64 = rng.random();
        let mut g = k - 1;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                g = i;
                break;
            }
            u -= p;
        }
        let spec = cfg.groups[g];
        gs.push(g);
        us.push(spec.mean + spec.var.sqrt() * normal.sample(&mut rng));
    }
    let n = cfg.n as f64;
    let global = us.iter().sum::<f64>() / n;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&g, &u) in gs.iter().zip(&us) {
        sums[g] += u;
        counts[g] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { global })
        .collect();
    let r0 = us.iter().map(|u| (u - global).powi(2)).sum::<f64>() / n;
    let rg = gs.iter().zip(&us).map(|(&g, u)| (u - means[g]).powi(2)).sum::<f64>() / n;
    let mu: f64 = probs.iter().zip(&cfg.groups).map(|(p, g)| p * g.mean).sum();
    let expected_gap: f64 = probs.iter().zip(&cfg.groups).map(|(p, g)| p * (g.mean - mu).powi(2)).sum();
    let expected_rg: f64 = probs.iter().zip(&cfg.groups).map(|(p, g)| p * g.var).sum();
    let gap = r0 - rg;
    let gap_matches = if expected_gap > 0.0 {
        (gap - expected_gap).abs() <= cfg.rel_tolerance * expected_gap
    } else {
        // Sampling noise only: the in-sample gap is of order Var(U)·K/n.
        gap.abs() <= 10.0 * expected_rg.max(1e-12) * k as f64 / n
    };
    Ok(OracleRiskReport {
        r0,
        rg,
        gap,
        expected_r0: expected_rg + expected_gap,
        expected_rg,
        expected_gap,
        dominance_holds: rg <= r0 + 1e-12 * r0.abs(),
        gap_matches,
    })
}
