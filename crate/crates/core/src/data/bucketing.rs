//! Duration groups: the map from video duration to a group index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketMode {
    EqualFrequency,
    Fixed,
}

/// Group `g` covers `[boundaries[g-1], boundaries[g])` with open ends at
/// both extremes, so a duration equal to a boundary lands in the higher
/// group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    pub mode: BucketMode,
    pub boundaries: Vec<f64>,
}

impl Bucketing {
    pub fn single() -> Self {
        Self {
            mode: BucketMode::Fixed,
            boundaries: Vec::new(),
        }
    }

    pub fn fixed(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("bucket boundaries must be finite".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bucket boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        Ok(Self {
            mode: BucketMode::Fixed,
            boundaries,
        })
    }

    /// Number of groups `K`.
    pub fn num_groups(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn group(&self, duration: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= duration)
    }

    pub fn groups(&self, durations: &[f64]) -> Vec<usize> {
        durations.iter().map(|&d| self.group(d)).collect()
    }
}

/// Fits `K` groups on training durations. Equal-frequency boundaries sit at
/// the linear-interpolated quantiles `i/K`; fixed mode takes `fixed`
/// verbatim and ignores the data.
pub fn fit_bucketing(
    durations: &[f64],
    k: usize,
    mode: BucketMode,
    fixed: Option<&[f64]>,
) -> Result<Bucketing> {
    match mode {
        BucketMode::Fixed => {
            let b = fixed
                .ok_or_else(|| Error::Config("fixed bucketing needs boundaries".into()))?
                .to_vec();
            Bucketing::fixed(b)
        }
        BucketMode::EqualFrequency => {
            if k == 0 {
                return Err(Error::Config("bucket count K must be at least 1".into()));
            }
            let mut sorted = durations.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < k {
                return Err(Error::Data(format!(
                    "equal-frequency bucketing with K = {k} needs at least {k} distinct durations, got {}",
                    distinct.len()
                )));
            }
            let boundaries: Vec<f64> = (1..k)
                .map(|i| quantile_sorted(&sorted, i as f64 / k as f64))
                .collect();
            if boundaries.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!(
                    "duration ties collapse equal-frequency boundaries: {boundaries:?}"
                )));
            }
            Ok(Bucketing {
                mode: BucketMode::EqualFrequency,
                boundaries,
            })
        }
    }
}
