//! CSV log ingestion with a declarative column map.
//!
//! Rows that violate impression invariants are dropped and counted rather
//! than failing the whole file. Missing auxiliary-label columns are derived
//! from watch time with [`AuxThresholds`]; `negative_feedback` cannot be
//! derived and defaults to `false` in that case.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::AuxThresholds;
use super::impression::{Impression, AUX_NAMES, NUM_AUX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub user_id: String,
    pub item_id: String,
    pub duration: String,
    pub watch_time: String,
    /// Multiplier taking the duration column to seconds.
    pub duration_scale: f64,
    /// Multiplier taking the watch-time column to seconds.
    pub watch_time_scale: f64,
    pub features: Vec<String>,
    /// Column per auxiliary label, keyed by label name.
    pub aux_labels: HashMap<String, String>,
    pub thresholds: AuxThresholds,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            item_id: "item_id".into(),
            duration: "duration_s".into(),
            watch_time: "watch_time_s".into(),
            duration_scale: 1.0,
            watch_time_scale: 1.0,
            features: Vec::new(),
            aux_labels: HashMap::new(),
            thresholds: AuxThresholds::default(),
        }
    }
}

impl CsvSchema {
    /// KuaiRec `small_matrix.csv` / `big_matrix.csv`: durations are logged in
    /// milliseconds.
    pub fn kuairec() -> Self {
        Self {
            item_id: "video_id".into(),
            duration: "video_duration".into(),
            watch_time: "play_duration".into(),
            duration_scale: 1e-3,
            watch_time_scale: 1e-3,
            ..Self::default()
        }
    }

    /// Schema matching the files written by [`write_csv`] with
    /// `feature_dim` feature columns.
    pub fn native(feature_dim: usize) -> Self {
        Self {
            features: (0..feature_dim).map(|i| format!("f{i}")).collect(),
            aux_labels: AUX_NAMES
                .iter()
                .map(|n| (n.to_string(), n.to_string()))
                .collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub accepted: usize,
    pub non_positive_duration: usize,
    pub negative_watch_time: usize,
    pub non_numeric: usize,
}

impl RejectionReport {
    pub fn rejected(&self) -> usize {
        self.non_positive_duration + self.negative_watch_time + self.non_numeric
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Data(format!("missing required column `{name}`")))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "True" | "TRUE" => Some(true),
        "0" | "false" | "False" | "FALSE" => Some(false),
        other => other.parse::<f64>().ok().map(|v| v != 0.0),
    }
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<(Vec<Impression>, RejectionReport)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let user = column(&headers, &schema.user_id)?;
    let item = column(&headers, &schema.item_id)?;
    let duration = column(&headers, &schema.duration)?;
    let watch = column(&headers, &schema.watch_time)?;
    let features = schema
        .features
        .iter()
        .map(|f| column(&headers, f))
        .collect::<Result<Vec<_>>>()?;
    let mut aux_cols = [None; NUM_AUX];
    for (slot, name) in aux_cols.iter_mut().zip(AUX_NAMES) {
        if let Some(col) = schema.aux_labels.get(name) {
            *slot = Some(column(&headers, col)?);
        }
    }

    let mut out = Vec::new();
    let mut report = RejectionReport::default();
    for record in reader.records() {
        let record = record?;
        let num = |i: usize| record.get(i).and_then(|s| s.trim().parse::<f64>().ok());
        let id = |i: usize| {
            record.get(i).and_then(|s| {
                let s = s.trim();
                s.parse::<u64>()
                    .ok()
                    .or_else(|| s.parse::<f64>().ok().filter(|v| *v >= 0.0 && v.fract() == 0.0).map(|v| v as u64))
            })
        };
        let (Some(user_id), Some(item_id), Some(d), Some(y)) = (id(user), id(item), num(duration), num(watch))
        else {
            report.non_numeric += 1;
            continue;
        };
        let feats: Option<Vec<f64>> = features.iter().map(|&i| num(i)).collect();
        let Some(feats) = feats else {
            report.non_numeric += 1;
            continue;
        };
        let duration_s = d * schema.duration_scale;
        let watch_time_s = y * schema.watch_time_scale;
        if !duration_s.is_finite() || !watch_time_s.is_finite() || feats.iter().any(|v| !v.is_finite()) {
            report.non_numeric += 1;
            continue;
        }
        if duration_s <= 0.0 {
            report.non_positive_duration += 1;
            continue;
        }
        if watch_time_s < 0.0 {
            report.negative_watch_time += 1;
            continue;
        }
        let derived = schema.thresholds.labels(watch_time_s, duration_s, f64::INFINITY);
        let mut aux_labels = [false; NUM_AUX];
        let mut bad = false;
        for m in 0..NUM_AUX {
            aux_labels[m] = match aux_cols[m] {
                Some(col) => match record.get(col).and_then(parse_bool) {
                    Some(v) => v,
                    None => {
                        bad = true;
                        false
                    }
                },
                None => derived[m],
            };
        }
        if bad {
            report.non_numeric += 1;
            continue;
        }
        out.push(Impression {
            user_id,
            item_id,
            features: feats,
            duration_s,
            watch_time_s,
            aux_labels,
        });
    }
    report.accepted = out.len();
    Ok((out, report))
}

/// Writes impressions in the native layout read by [`CsvSchema::native`].
pub fn write_csv(path: &Path, data: &[Impression]) -> Result<()> {
    let feature_dim = data.first().map_or(0, |r| r.features.len());
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    let mut header: Vec<String> = vec![
        "user_id".into(),
        "item_id".into(),
        "duration_s".into(),
        "watch_time_s".into(),
    ];
    header.extend((0..feature_dim).map(|i| format!("f{i}")));
    header.extend(AUX_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in data {
        let mut row: Vec<String> = vec![
            r.user_id.to_string(),
            r.item_id.to_string(),
            r.duration_s.to_string(),
            r.watch_time_s.to_string(),
        ];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.extend(r.aux_labels.iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}
