//! Bucketed bias tables, tail slices, factor-distribution summaries and the
//! combined evaluation report.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, per_user_xauc, xauc, DEFAULT_MAX_PAIRS};
use crate::correction::DadfModel;
use crate::data::{Bucketing, Impression};
use crate::error::{Error, Result};
use crate::first_stage::FirstStageOutput;
use crate::stats;
use crate::transform::TransformParams;

/// Interior watch-time edges in seconds; rows run from 0 to +∞.
pub const DEFAULT_WATCH_EDGES: [f64; 10] = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0];
pub const DEFAULT_TAIL_FRACTIONS: [f64; 2] = [0.2, 0.1];
pub const MIN_SLICE: usize = 100;
pub const QUANTILE_LEVELS: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];
pub const WUAUC_NOTE: &str =
    "per_user_xauc is an interpretation of WUAUC: within-user XAUC weighted by each user's comparable-pair count";
pub const GLOBAL_CORRECTION_NOTE: &str =
    "global_correction is a simplified global log-space multiplicative correction, an approximation of calibration-style baselines";

/// One row of a bucket table. Statistics are `None` for empty buckets or
/// zero denominators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lower: f64,
    /// `None` is +∞.
    pub upper: Option<f64>,
    pub count: usize,
    /// `mean(ŷ) / mean(y)`.
    pub bias_ratio: Option<f64>,
    pub base_bias_ratio: Option<f64>,
    pub mae: Option<f64>,
    pub base_mae: Option<f64>,
    /// `1 - mae / base_mae`.
    pub mae_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTables {
    pub by_duration: Vec<BucketRow>,
    pub by_watch_time: Vec<BucketRow>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

fn bucket_row(lower: f64, upper: Option<f64>, idx: &[usize], y: &[f64], y_hat: &[f64], y_hat0: &[f64]) -> BucketRow {
    if idx.is_empty() {
        return BucketRow {
            lower,
            upper,
            count: 0,
            bias_ratio: None,
            base_bias_ratio: None,
            mae: None,
            base_mae: None,
            mae_reduction: None,
        };
    }
    let n = idx.len() as f64;
    let sum = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>();
    let abs = |v: &[f64]| idx.iter().map(|&i| (v[i] - y[i]).abs()).sum::<f64>() / n;
    let (sy, m, m0) = (sum(y), abs(y_hat), abs(y_hat0));
    BucketRow {
        lower,
        upper,
        count: idx.len(),
        bias_ratio: ratio(sum(y_hat), sy),
        base_bias_ratio: ratio(sum(y_hat0), sy),
        mae: Some(m),
        base_mae: Some(m0),
        mae_reduction: ratio(m, m0).map(|r| 1.0 - r),
    }
}

fn check_inputs(data: &[Impression], y_hat: &[f64], y_hat0: &[f64]) -> Result<()> {
    if data.len() != y_hat.len() || data.len() != y_hat0.len() {
        return Err(Error::Metric(format!(
            "{} impressions, {} predictions, {} base predictions",
            data.len(),
            y_hat.len(),
            y_hat0.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::Metric("report over an empty sample".into()));
    }
    Ok(())
}

/// Per-bucket bias ratios and MAE for the corrected and the base
/// predictions, keyed by duration group and by observed watch time.
pub fn bucket_report(
    data: &[Impression],
    y_hat: &[f64],
    y_hat0: &[f64],
    bucketing: &Bucketing,
    watch_edges: &[f64],
) -> Result<BucketTables> {
    check_inputs(data, y_hat, y_hat0)?;
    if watch_edges.windows(2).any(|w| w[0] >= w[1]) || watch_edges.first().is_some_and(|e| *e <= 0.0) {
        return Err(Error::Config("watch-time edges must be positive and strictly increasing".into()));
    }
    let y: Vec<f64> = data.iter().map(|r| r.watch_time_s).collect();
    let k = bucketing.num_groups();
    let mut by_g = vec![Vec::new(); k];
    for (i, r) in data.iter().enumerate() {
        by_g[bucketing.group(r.duration_s)].push(i);
    }
    let by_duration = by_g
        .iter()
        .enumerate()
        .map(|(g, idx)| {
            let lower = if g == 0 { 0.0 } else { bucketing.boundaries[g - 1] };
            bucket_row(lower, bucketing.boundaries.get(g).copied(), idx, &y, y_hat, y_hat0)
        })
        .collect();
    let mut by_w = vec![Vec::new(); watch_edges.len() + 1];
    for (i, &v) in y.iter().enumerate() {
        by_w[watch_edges.partition_point(|&e| e <= v)].push(i);
    }
    let by_watch_time = by_w
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            let lower = if j == 0 { 0.0 } else { watch_edges[j - 1] };
            bucket_row(lower, watch_edges.get(j).copied(), idx, &y, y_hat, y_hat0)
        })
        .collect();
    Ok(BucketTables {
        by_duration,
        by_watch_time,
    })
}

/// Largest `|ratio - 1|` over non-empty rows, for the corrected (`base =
/// false`) or base predictions.
pub fn max_ratio_deviation(rows: &[BucketRow], base: bool) -> f64 {
    rows.iter()
        .filter_map(|r| if base { r.base_bias_ratio } else { r.bias_ratio })
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn write_bucket_csv(path: &Path, rows: &[BucketRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "lower",
        "upper",
        "count",
        "bias_ratio",
        "base_bias_ratio",
        "mae",
        "base_mae",
        "mae_reduction",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.lower.to_string(),
            r.upper.map_or_else(|| "inf".to_string(), |u| u.to_string()),
            r.count.to_string(),
            opt(r.bias_ratio),
            opt(r.base_bias_ratio),
            opt(r.mae),
            opt(r.base_mae),
            opt(r.mae_reduction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSlice {
    /// Top fraction by duration; `None` for all samples.
    pub fraction: Option<f64>,
    pub count: usize,
    pub mae: f64,
    pub base_mae: f64,
    pub mae_reduction: Option<f64>,
    pub xauc: Option<f64>,
    pub base_xauc: Option<f64>,
    pub xauc_lift: Option<f64>,
    /// Set when the slice holds fewer than [`MIN_SLICE`] samples.
    pub small: bool,
}

/// MAE reduction and XAUC lift over all samples and over the top-duration
/// fractions.
pub fn tail_slice_report(
    data: &[Impression],
    y_hat: &[f64],
    y_hat0: &[f64],
    fractions: &[f64],
    max_pairs: u64,
    seed: u64,
) -> Result<Vec<TailSlice>> {
    check_inputs(data, y_hat, y_hat0)?;
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config("tail fractions must lie in (0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].duration_s.total_cmp(&data[a].duration_s).then(a.cmp(&b)));
    let slice = |fraction: Option<f64>| -> Result<TailSlice> {
        let take = fraction.map_or(data.len(), |f| ((f * data.len() as f64).ceil() as usize).max(1));
        let idx = &order[..take];
        let y: Vec<f64> = idx.iter().map(|&i| data[i].watch_time_s).collect();
        let p: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
        let p0: Vec<f64> = idx.iter().map(|&i| y_hat0[i]).collect();
        let (m, m0) = (mae(&y, &p)?, mae(&y, &p0)?);
        let x = xauc(&y, &p, Some(max_pairs), seed).ok().map(|x| x.value);
        let x0 = xauc(&y, &p0, Some(max_pairs), seed).ok().map(|x| x.value);
        let small = take < MIN_SLICE;
        if small {
            warn!("tail slice {fraction:?} holds only {take} samples");
        }
        Ok(TailSlice {
            fraction,
            count: take,
            mae: m,
            base_mae: m0,
            mae_reduction: ratio(m, m0).map(|r| 1.0 - r),
            xauc: x,
            base_xauc: x0,
            xauc_lift: x.zip(x0).map(|(a, b)| a - b),
            small,
        })
    };
    std::iter::once(None)
        .chain(fractions.iter().map(|f| Some(*f)))
        .map(slice)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Values at [`QUANTILE_LEVELS`].
    pub quantiles: Vec<f64>,
    /// 21 equal-width edges from the minimum to the maximum.
    pub histogram_edges: Vec<f64>,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        Some(Self {
            count: xs.len(),
            mean: stats::mean(xs),
            variance: stats::variance(xs),
            skewness: stats::skewness(xs),
            quantiles: QUANTILE_LEVELS.iter().map(|&q| stats::quantile_sorted(&sorted, q)).collect(),
            histogram_edges: (0..=20).map(|i| lo + (hi - lo) * f64::from(i) / 20.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFactors {
    pub group: usize,
    pub lambda: f64,
    pub b: Option<Summary>,
    pub z: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub lambdas: Vec<f64>,
    pub groups: Vec<GroupFactors>,
    /// `"decreasing"`, `"increasing"` or `"mixed"` across groups; reported,
    /// never asserted.
    pub lambda_trend: String,
}

/// Per-group summaries of raw labels `b` and transformed `z = T_λg(b)`.
pub fn factor_distribution_report(b: &[f64], groups: &[usize], params: &TransformParams) -> Result<FactorReport> {
    if b.len() != groups.len() {
        return Err(Error::Metric("labels and groups differ in length".into()));
    }
    let k = params.lambdas.len();
    let mut per_b = vec![Vec::new(); k];
    let mut per_z = vec![Vec::new(); k];
    for (&v, &g) in b.iter().zip(groups) {
        let z = params.forward(v, g)?;
        per_b[g].push(v);
        per_z[g].push(z);
    }
    let l = &params.lambdas;
    let lambda_trend = if l.windows(2).all(|w| w[1] <= w[0]) {
        "decreasing"
    } else if l.windows(2).all(|w| w[1] >= w[0]) {
        "increasing"
    } else {
        "mixed"
    };
    Ok(FactorReport {
        lambdas: l.clone(),
        groups: (0..k)
            .map(|g| GroupFactors {
                group: g,
                lambda: l[g],
                b: Summary::of(&per_b[g]),
                z: Summary::of(&per_z[g]),
            })
            .collect(),
        lambda_trend: lambda_trend.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub watch_edges: Vec<f64>,
    pub tail_fractions: Vec<f64>,
    pub max_pairs: u64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            watch_edges: DEFAULT_WATCH_EDGES.to_vec(),
            tail_fractions: DEFAULT_TAIL_FRACTIONS.to_vec(),
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub notes: Vec<String>,
    pub n: usize,
    pub mae: f64,
    pub base_mae: f64,
    pub xauc: f64,
    pub base_xauc: f64,
    pub xauc_sampled: bool,
    pub per_user_xauc: Option<f64>,
    pub base_per_user_xauc: Option<f64>,
    pub buckets: BucketTables,
    pub tails: Vec<TailSlice>,
    pub factors: FactorReport,
    pub domain_clamps: usize,
}

impl EvalReport {
    pub fn mae_reduction(&self) -> f64 {
        1.0 - self.mae / self.base_mae
    }

    /// Writes `<stem>.json` and one CSV per bucket view into `dir`; returns
    /// the JSON path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        write_bucket_csv(&dir.join(format!("{stem}_duration_buckets.csv")), &self.buckets.by_duration)?;
        write_bucket_csv(&dir.join(format!("{stem}_watch_buckets.csv")), &self.buckets.by_watch_time)?;
        Ok(json)
    }
}

/// Evaluates a trained model against its frozen first stage.
pub fn evaluate(
    model: &DadfModel,
    variant: &str,
    data: &[Impression],
    outputs: &[FirstStageOutput],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let preds = model.predict(data, outputs)?;
    let y: Vec<f64> = data.iter().map(|r| r.watch_time_s).collect();
    let y_hat: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
    let y_hat0: Vec<f64> = outputs.iter().map(|o| o.y_hat0).collect();
    let x = xauc(&y, &y_hat, Some(cfg.max_pairs), cfg.seed)?;
    let x0 = xauc(&y, &y_hat0, Some(cfg.max_pairs), cfg.seed)?;
    let users: Vec<u64> = data.iter().map(|r| r.user_id).collect();
    let eps = model.config.eps;
    let b: Vec<f64> = y.iter().zip(&y_hat0).map(|(&a, &p)| a / (p + eps)).collect();
    let groups: Vec<usize> = preds.iter().map(|p| p.group).collect();
    let params = model.transform_params();
    let domain_clamps = preds
        .iter()
        .filter(|p| p.z_hat * params.lambdas[p.group] + 1.0 <= 0.0)
        .count();
    let mut notes = vec![WUAUC_NOTE.to_string()];
    if variant == "global_correction" {
        notes.push(GLOBAL_CORRECTION_NOTE.to_string());
    }
    Ok(EvalReport {
        variant: variant.into(),
        notes,
        n: data.len(),
        mae: mae(&y, &y_hat)?,
        base_mae: mae(&y, &y_hat0)?,
        xauc: x.value,
        base_xauc: x0.value,
        xauc_sampled: x.sampled,
        per_user_xauc: per_user_xauc(&users, &y, &y_hat).ok().map(|p| p.value),
        base_per_user_xauc: per_user_xauc(&users, &y, &y_hat0).ok().map(|p| p.value),
        buckets: bucket_report(data, &y_hat, &y_hat0, &model.bucketing, &cfg.watch_edges)?,
        tails: tail_slice_report(data, &y_hat, &y_hat0, &cfg.tail_fractions, cfg.max_pairs, cfg.seed)?,
        factors: factor_distribution_report(&b, &groups, &params)?,
        domain_clamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig};

    fn data(n: usize) -> Vec<Impression> {
        generate_synthetic(n, 4, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn perfect_predictions_give_unit_ratios() {
        let d = data(2000);
        let y: Vec<f64> = d.iter().map(|r| r.watch_time_s).collect();
        let bk = Bucketing::fixed(vec![30.0, 90.0]).unwrap();
        let t = bucket_report(&d, &y, &y, &bk, &DEFAULT_WATCH_EDGES).unwrap();
        for r in t.by_duration.iter().chain(&t.by_watch_time) {
            if r.count > 0 && r.bias_ratio.is_some() {
                assert!((r.bias_ratio.unwrap() - 1.0).abs() < 1e-12);
                assert_eq!(r.mae, Some(0.0));
            }
        }
    }

    #[test]
    fn counts_and_maes_recompose() {
        let d = data(3000);
        let y: Vec<f64> = d.iter().map(|r| r.watch_time_s).collect();
        let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| v * (0.5 + (i % 7) as f64 / 5.0)).collect();
        let p0: Vec<f64> = y.iter().map(|v| 0.8 * v + 3.0).collect();
        let bk = Bucketing::fixed(vec![20.0, 45.0, 120.0]).unwrap();
        let t = bucket_report(&d, &p, &p0, &bk, &DEFAULT_WATCH_EDGES).unwrap();
        let global = mae(&y, &p).unwrap();
        for rows in [&t.by_duration, &t.by_watch_time] {
            assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), d.len());
            let weighted: f64 = rows.iter().filter_map(|r| r.mae.map(|m| m * r.count as f64)).sum();
            assert!((weighted / d.len() as f64 - global).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_bucket_has_null_statistics() {
        let d = data(200);
        let y: Vec<f64> = d.iter().map(|r| r.watch_time_s).collect();
        let bk = Bucketing::fixed(vec![1e6]).unwrap();
        let t = bucket_report(&d, &y, &y, &bk, &[1e9]).unwrap();
        assert_eq!(t.by_duration[1].count, 0);
        assert_eq!(t.by_duration[1].mae, None);
        assert_eq!(t.by_watch_time[1].bias_ratio, None);
    }

    #[test]
    fn uniform_improvement_gives_equal_tail_deltas() {
        let d = data(4000);
        let y: Vec<f64> = d.iter().map(|r| r.watch_time_s).collect();
        let p0: Vec<f64> = y.iter().map(|v| 1.5 * v).collect();
        let p: Vec<f64> = y.iter().map(|v| 1.25 * v).collect();
        let s = tail_slice_report(&d, &p, &p0, &DEFAULT_TAIL_FRACTIONS, DEFAULT_MAX_PAIRS, 0).unwrap();
        assert_eq!(s.len(), 3);
        for t in &s {
            assert!((t.mae_reduction.unwrap() - 0.5).abs() < 1e-12);
            assert_eq!(t.xauc_lift, Some(0.0));
        }
        assert_eq!(s[1].count, 800);
        assert_eq!(s[2].count, 400);
        let tiny = tail_slice_report(&d[..500], &p[..500], &p0[..500], &[0.1], DEFAULT_MAX_PAIRS, 0).unwrap();
        assert!(tiny[1].small);
    }

    #[test]
    fn constant_factor_summary() {
        let b = vec![1.0; 50];
        let groups = vec![0; 50];
        let params = TransformParams::new(vec![0.3]);
        let r = factor_distribution_report(&b, &groups, &params).unwrap();
        let z1 = params.forward(1.0, 0).unwrap();
        let sb = r.groups[0].b.as_ref().unwrap();
        let sz = r.groups[0].z.as_ref().unwrap();
        assert!(sb.quantiles.iter().all(|q| *q == 1.0));
        assert_eq!(sb.skewness, 0.0);
        assert!(sz.quantiles.iter().all(|q| *q == z1));
    }
}
