use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NUM_AUX;
use crate::error::{Error, Result};
use crate::numeric::graph::softplus;

/// Map from the raw watch-time output `ℓ0` to the prediction `ŷ0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMapping {
    /// `ŷ0 = softplus(ℓ0)`.
    Softplus,
    /// `ŷ0 = min(scale · exp(ℓ0), d)`.
    ScaledExp { scale: f64 },
}

impl OutputMapping {
    pub fn apply(&self, l0: f64, duration: f64) -> f64 {
        match *self {
            OutputMapping::Softplus => softplus(l0),
            OutputMapping::ScaledExp { scale } => (scale * l0.exp()).clamp(0.0, duration),
        }
    }
}

/// Signals a frozen first stage exposes for one impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageOutput {
    pub y_hat0: f64,
    pub l0: f64,
    /// Playtime regression logit `ℓ_play`, separate from `ℓ0`.
    pub play_logit: f64,
    pub aux_logits: [f64; NUM_AUX],
    /// One tower representation per auxiliary task.
    pub tower_reps: Vec<Vec<f64>>,
    pub common_rep: Vec<f64>,
}

impl FirstStageOutput {
    pub fn is_finite(&self) -> bool {
        self.y_hat0.is_finite()
            && self.l0.is_finite()
            && self.play_logit.is_finite()
            && self.aux_logits.iter().all(|v| v.is_finite())
            && self.tower_reps.iter().flatten().all(|v| v.is_finite())
            && self.common_rep.iter().all(|v| v.is_finite())
    }

    pub fn rep_dim(&self) -> usize {
        self.tower_reps.first().map_or(0, Vec::len)
    }
}

/// Anything that can produce first-stage signals for a batch of impressions.
pub trait FirstStage {
    fn emit(&self, data: &[crate::data::Impression]) -> Result<Vec<FirstStageOutput>>;
}

/// Writes outputs one row per impression with flattened representations.
pub fn write_outputs_csv(path: &Path, outputs: &[FirstStageOutput]) -> Result<()> {
    let rep_dim = outputs.first().map_or(0, FirstStageOutput::rep_dim);
    let common_dim = outputs.first().map_or(0, |o| o.common_rep.len());
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    let mut header = vec!["y_hat0".to_string(), "l0".into(), "play_logit".into()];
    header.extend((0..NUM_AUX).map(|m| format!("aux{m}")));
    for m in 0..NUM_AUX {
        header.extend((0..rep_dim).map(|k| format!("rep{m}_{k}")));
    }
    header.extend((0..common_dim).map(|k| format!("xc{k}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for o in outputs {
        if o.rep_dim() != rep_dim || o.common_rep.len() != common_dim || o.tower_reps.len() != NUM_AUX {
            return Err(Error::Data("first-stage outputs have inconsistent widths".into()));
        }
        row.clear();
        row.push(o.y_hat0.to_string());
        row.push(o.l0.to_string());
        row.push(o.play_logit.to_string());
        row.extend(o.aux_logits.iter().map(f64::to_string));
        row.extend(o.tower_reps.iter().flatten().map(f64::to_string));
        row.extend(o.common_rep.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

pub fn read_outputs_csv(path: &Path) -> Result<Vec<FirstStageOutput>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let rep_dim = headers.iter().filter(|h| h.starts_with("rep0_")).count();
    let common_dim = headers.iter().filter(|h| h.starts_with("xc")).count();
    let expected = 3 + NUM_AUX + NUM_AUX * rep_dim + common_dim;
    if headers.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} columns, found {}",
            path.display(),
            headers.len()
        )));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let vals = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Data(format!("{} row {}: {e}", path.display(), line + 1)))?;
        let mut aux_logits = [0.0; NUM_AUX];
        aux_logits.copy_from_slice(&vals[3..3 + NUM_AUX]);
        let reps_start = 3 + NUM_AUX;
        let tower_reps = (0..NUM_AUX)
            .map(|m| vals[reps_start + m * rep_dim..reps_start + (m + 1) * rep_dim].to_vec())
            .collect();
        out.push(FirstStageOutput {
            y_hat0: vals[0],
            l0: vals[1],
            play_logit: vals[2],
            aux_logits,
            tower_reps,
            common_rep: vals[reps_start + NUM_AUX * rep_dim..].to_vec(),
        });
    }
    Ok(out)
}
