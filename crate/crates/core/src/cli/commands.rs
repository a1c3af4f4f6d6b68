//! Pipeline commands. Each reads its inputs from, and writes its artifacts
//! into, one run directory:
//!
//! ```text
//! <run>/data/{train,val,test}.csv, manifest.json
//! <run>/first_stage/outputs_{train,val,test}.csv, model.json | oracle.json
//! <run>/dadf/<variant>_k<K>_seed<S>/model.json, train_log.jsonl, summary.json
//! <run>/eval/<run>_<variant>_k<K>_seed<S>/report.json, *_buckets.csv
//! <run>/sweep/sweep_report.json, k<K>/model.json
//! <run>/appendix/{long_tail,exponential_control,oracle_risk,summary}.json
//! ```
//!
//! Every output directory also holds the resolved `config.toml`. Existing
//! output directories are never overwritten; a new one gets a timestamp
//! suffix.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{DataSource, FirstStageKind, RunConfig};
use crate::correction::DadfModel;
use crate::data::{
    fit_bucketing, generate_synthetic, ingest_csv, split, write_csv, Bucketing, CsvSchema, Impression,
    RejectionReport,
};
use crate::error::{Error, Result};
use crate::eval::{
    bucket_sensitivity_sweep, check_long_tail_inheritance, check_oracle_risk, evaluate, EvalReport, SweepPoint,
};
use crate::first_stage::{
    freeze_and_emit, read_outputs_csv, train_first_stage, write_outputs_csv, Backbone, BiasedOracle, FirstStage,
    FirstStageOutput,
};
use crate::stats;
use crate::training::{train_variant, TrainData, TrainOutcome};

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Returns `path` if it does not exist yet, otherwise a timestamp-suffixed
/// sibling that does not exist either. The directory is created.
pub fn fresh_dir(path: &Path) -> Result<PathBuf> {
    let mut candidate = path.to_path_buf();
    if candidate.exists() {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let name = path.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
        let mut i = 0;
        loop {
            let suffix = if i == 0 { format!("{name}-{stamp}") } else { format!("{name}-{stamp}-{i}") };
            candidate = path.with_file_name(suffix);
            if !candidate.exists() {
                break;
            }
            i += 1;
        }
        warn!("{} exists; writing to {}", path.display(), candidate.display());
    }
    std::fs::create_dir_all(&candidate)?;
    Ok(candidate)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let path = require(path.to_path_buf())?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// Name of a trained model: `<variant>_k<K>_seed<S>`.
pub fn model_tag(cfg: &RunConfig) -> String {
    format!("{}_k{}_seed{}", cfg.variant, cfg.k(), cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
    pub skewness: f64,
    pub zero_fraction: f64,
}

impl ColumnStats {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            median: stats::median(xs),
            p99: stats::quantile(xs, 0.99),
            skewness: stats::skewness(xs),
            zero_fraction: xs.iter().filter(|v| **v == 0.0).count() as f64 / xs.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub source: DataSource,
    pub rows: [usize; 3],
    pub feature_dim: usize,
    pub watch_time: ColumnStats,
    pub duration: ColumnStats,
    pub rejections: Option<RejectionReport>,
}

pub struct Dataset {
    pub manifest: DataManifest,
    pub train: Vec<Impression>,
    pub val: Vec<Impression>,
    pub test: Vec<Impression>,
}

/// Writes the train/val/test split and its manifest.
pub fn cmd_gen_data(cfg: &RunConfig, run: &Path) -> Result<PathBuf> {
    let (data, rejections) = match cfg.data.source {
        DataSource::Synthetic => (generate_synthetic(cfg.data.n, cfg.seed, &cfg.data.generator)?, None),
        DataSource::Csv => {
            let path = cfg.data.csv_path.as_ref().expect("validated");
            let (rows, report) = ingest_csv(&require(path.clone())?, &cfg.data.schema)?;
            (rows, Some(report))
        }
    };
    let s = split(&data, &cfg.split)?;
    let dir = fresh_dir(&run.join("data"))?;
    for (name, part) in SPLITS.iter().zip([&s.train, &s.val, &s.test]) {
        write_csv(&dir.join(format!("{name}.csv")), part)?;
    }
    let w: Vec<f64> = data.iter().map(|r| r.watch_time_s).collect();
    let d: Vec<f64> = data.iter().map(|r| r.duration_s).collect();
    let manifest = DataManifest {
        seed: cfg.seed,
        source: cfg.data.source,
        rows: [s.train.len(), s.val.len(), s.test.len()],
        feature_dim: data.first().map_or(0, |r| r.features.len()),
        watch_time: ColumnStats::of(&w),
        duration: ColumnStats::of(&d),
        rejections,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_config(&dir, cfg)?;
    info!(
        "wrote {}/{}/{} rows to {} (watch-time skewness {:.2})",
        manifest.rows[0],
        manifest.rows[1],
        manifest.rows[2],
        dir.display(),
        manifest.watch_time.skewness
    );
    Ok(dir)
}

pub fn load_dataset(run: &Path) -> Result<Dataset> {
    let dir = run.join("data");
    let manifest: DataManifest = read_json(&dir.join("manifest.json"))?;
    let schema = CsvSchema::native(manifest.feature_dim);
    let load = |name: &str| -> Result<Vec<Impression>> {
        let (rows, report) = ingest_csv(&require(dir.join(format!("{name}.csv")))?, &schema)?;
        if report.rejected() > 0 {
            return Err(Error::Data(format!("{name}.csv has {} invalid rows", report.rejected())));
        }
        Ok(rows)
    };
    Ok(Dataset {
        train: load("train")?,
        val: load("val")?,
        test: load("test")?,
        manifest,
    })
}

/// Trains (or instantiates) the first stage, freezes it and writes its
/// signals for every split.
pub fn cmd_train_first_stage(cfg: &RunConfig, run: &Path) -> Result<PathBuf> {
    let ds = load_dataset(run)?;
    let dir = fresh_dir(&run.join("first_stage"))?;
    let outputs: Vec<Vec<FirstStageOutput>> = match cfg.first_stage.backbone {
        FirstStageKind::Vr | FirstStageKind::Wlr => {
            let backbone = if cfg.first_stage.backbone == FirstStageKind::Vr {
                Backbone::Vr
            } else {
                Backbone::Wlr
            };
            let mut model = train_first_stage(backbone, &ds.train, &ds.val, &cfg.first_stage.hyper)?;
            let outs = [&ds.train, &ds.val, &ds.test]
                .into_iter()
                .map(|part| freeze_and_emit(&mut model, part))
                .collect::<Result<Vec<_>>>()?;
            write_json(&dir.join("model.json"), &model)?;
            let mut log = String::new();
            for e in &model.history {
                log.push_str(&serde_json::to_string(e)?);
                log.push('\n');
            }
            std::fs::write(dir.join("train_log.jsonl"), log)?;
            outs
        }
        FirstStageKind::Oracle => {
            let mut oc = cfg.first_stage.oracle.clone();
            if cfg.first_stage.balance_oracle {
                oc.profile = oc.profile.balanced(&ds.train, oc.noise_sd)?;
            }
            let oracle = BiasedOracle::new(oc.clone())?;
            write_json(&dir.join("oracle.json"), &oc)?;
            [&ds.train, &ds.val, &ds.test]
                .into_iter()
                .map(|part| oracle.emit(part))
                .collect::<Result<Vec<_>>>()?
        }
    };
    for (name, outs) in SPLITS.iter().zip(&outputs) {
        write_outputs_csv(&dir.join(format!("outputs_{name}.csv")), outs)?;
    }
    write_config(&dir, cfg)?;
    info!("first stage written to {}", dir.display());
    Ok(dir)
}

pub fn load_outputs(run: &Path, name: &str) -> Result<Vec<FirstStageOutput>> {
    read_outputs_csv(&require(run.join("first_stage").join(format!("outputs_{name}.csv")))?)
}

pub fn fit_config_bucketing(cfg: &RunConfig, train: &[Impression]) -> Result<Bucketing> {
    let d: Vec<f64> = train.iter().map(|r| r.duration_s).collect();
    fit_bucketing(&d, cfg.bucketing.k, cfg.bucketing.mode, Some(&cfg.bucketing.boundaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub lambdas: Vec<f64>,
    pub domain_clamps: usize,
}

fn save_outcome(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    outcome.model.save(&dir.join("model.json"))?;
    outcome.write_log(&dir.join("train_log.jsonl"))?;
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            variant: outcome.variant.to_string(),
            k: outcome.model.num_groups(),
            seed: cfg.seed,
            epochs: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            best_val_mae: outcome.best_val_mae,
            lambdas: outcome.model.lambdas(),
            domain_clamps: outcome.domain_clamps(),
        },
    )?;
    write_config(dir, cfg)
}

fn train_with(cfg: &RunConfig, ds: &Dataset, outs: &[Vec<FirstStageOutput>]) -> Result<TrainOutcome> {
    let bucketing = fit_config_bucketing(cfg, &ds.train)?;
    let data = TrainData {
        train: &ds.train,
        train_out: &outs[0],
        val: &ds.val,
        val_out: &outs[1],
    };
    train_variant(cfg.variant, &data, &bucketing, &cfg.dadf)
}

fn load_all_outputs(run: &Path) -> Result<Vec<Vec<FirstStageOutput>>> {
    SPLITS.iter().map(|n| load_outputs(run, n)).collect()
}

/// Trains the configured variant on the frozen first-stage signals.
pub fn cmd_train_dadf(cfg: &RunConfig, run: &Path) -> Result<PathBuf> {
    let ds = load_dataset(run)?;
    let outs = load_all_outputs(run)?;
    let outcome = train_with(cfg, &ds, &outs)?;
    let dir = fresh_dir(&run.join("dadf").join(model_tag(cfg)))?;
    save_outcome(&dir, cfg, &outcome)?;
    info!(
        "{} trained for {} epochs (best {} with val MAE {:.4}); saved to {}",
        cfg.variant,
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_mae,
        dir.display()
    );
    Ok(dir)
}

/// Evaluates the configured variant's model on the test split.
pub fn cmd_evaluate(cfg: &RunConfig, run: &Path) -> Result<(PathBuf, EvalReport)> {
    let ds = load_dataset(run)?;
    let test_out = load_outputs(run, "test")?;
    let model = DadfModel::load(&run.join("dadf").join(model_tag(cfg)).join("model.json"))?;
    let report = evaluate(&model, cfg.variant.name(), &ds.test, &test_out, &cfg.eval)?;
    let dir = fresh_dir(&run.join("eval").join(format!("{}_{}", cfg.run_name, model_tag(cfg))))?;
    let path = report.write(&dir, "report")?;
    write_config(&dir, cfg)?;
    info!(
        "{}: test MAE {:.4} (base {:.4}), XAUC {:.4} (base {:.4}); report at {}",
        cfg.variant,
        report.mae,
        report.base_mae,
        report.xauc,
        report.base_xauc,
        path.display()
    );
    Ok((path, report))
}

/// Trains and evaluates the configured variant for every bucket count in
/// `sweep.ks` with the same seed.
pub fn cmd_sweep_k(cfg: &RunConfig, run: &Path) -> Result<PathBuf> {
    let ds = load_dataset(run)?;
    let outs = load_all_outputs(run)?;
    let dir = fresh_dir(&run.join("sweep"))?;
    let report = bucket_sensitivity_sweep(&cfg.sweep.ks, |k| {
        let mut c = cfg.clone();
        c.bucketing.mode = crate::data::BucketMode::EqualFrequency;
        c.bucketing.k = k;
        let outcome = train_with(&c, &ds, &outs)?;
        let sub = dir.join(format!("k{k}"));
        std::fs::create_dir_all(&sub)?;
        save_outcome(&sub, &c, &outcome)?;
        let r = evaluate(&outcome.model, c.variant.name(), &ds.test, &outs[2], &c.eval)?;
        info!("K = {k}: test MAE {:.4}, XAUC {:.4}", r.mae, r.xauc);
        Ok(SweepPoint {
            k,
            mae: r.mae,
            xauc: r.xauc,
            domain_clamps: outcome.domain_clamps() + r.domain_clamps,
        })
    })?;
    write_json(&dir.join("sweep_report.json"), &report)?;
    write_config(&dir, cfg)?;
    info!("MAE relative range over K: {:.4}", report.relative_range);
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixSummary {
    pub long_tail_pass: bool,
    pub exponential_control_pass: bool,
    pub oracle_risk_pass: bool,
}

/// Runs both appendix validators; fails when either check does not hold.
pub fn cmd_check_appendix(cfg: &RunConfig, run: &Path) -> Result<PathBuf> {
    let dir = fresh_dir(&run.join("appendix"))?;
    let a = &cfg.appendix;
    let lt = check_long_tail_inheritance(&a.long_tail)?;
    let ex = check_long_tail_inheritance(&a.exponential_control)?;
    let or = check_oracle_risk(&a.oracle_risk)?;
    write_json(&dir.join("long_tail.json"), &lt)?;
    write_json(&dir.join("exponential_control.json"), &ex)?;
    write_json(&dir.join("oracle_risk.json"), &or)?;
    let summary = AppendixSummary {
        long_tail_pass: lt.long_tailed,
        exponential_control_pass: !ex.long_tailed && ex.verdicts.iter().all(|v| v.matches_limit),
        oracle_risk_pass: or.dominance_holds && or.gap_matches,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_config(&dir, cfg)?;
    info!("appendix checks: {summary:?}");
    if !(summary.long_tail_pass && summary.exponential_control_pass && summary.oracle_risk_pass) {
        return Err(Error::Metric(format!("appendix check failed: {summary:?}")));
    }
    Ok(dir)
}

/// Data generation, first stage, correction training and evaluation in one
/// run directory.
pub fn cmd_run_all(cfg: &RunConfig, run: &Path) -> Result<(PathBuf, EvalReport)> {
    cmd_gen_data(cfg, run)?;
    cmd_train_first_stage(cfg, run)?;
    cmd_train_dadf(cfg, run)?;
    cmd_evaluate(cfg, run)
}
