//! Bucket-count sensitivity sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub mae: f64,
    pub xauc: f64,
    pub domain_clamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub mae_min: f64,
    pub mae_max: f64,
    /// `(max - min) / min` of MAE over the sweep.
    pub relative_range: f64,
}

/// Runs `run(k)` for every `k` (each a full train-and-evaluate pipeline with
/// the same seed) and summarises the MAE spread. The first failing run
/// aborts the sweep.
pub fn bucket_sensitivity_sweep<F>(ks: &[usize], mut run: F) -> Result<SweepReport>
where
    F: FnMut(usize) -> Result<SweepPoint>,
{
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("sweep needs bucket counts >= 1".into()));
    }
    let points = ks.iter().map(|&k| run(k)).collect::<Result<Vec<_>>>()?;
    let mae_min = points.iter().map(|p| p.mae).fold(f64::INFINITY, f64::min);
    let mae_max = points.iter().map(|p| p.mae).fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepReport {
        points,
        mae_min,
        mae_max,
        relative_range: (mae_max - mae_min) / mae_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_and_error_propagation() {
        let r = bucket_sensitivity_sweep(&[1, 2, 4], |k| {
            Ok(SweepPoint {
                k,
                mae: 10.0 + k as f64,
                xauc: 0.8,
                domain_clamps: 0,
            })
        })
        .unwrap();
        assert_eq!(r.mae_min, 11.0);
        assert_eq!(r.mae_max, 14.0);
        assert!((r.relative_range - 3.0 / 11.0).abs() < 1e-15);
        let err = bucket_sensitivity_sweep(&[2, 3], |k| {
            if k == 3 {
                Err(Error::Divergence("boom".into()))
            } else {
                Ok(SweepPoint {
                    k,
                    mae: 1.0,
                    xauc: 0.5,
                    domain_clamps: 0,
                })
            }
        });
        assert!(matches!(err, Err(Error::Divergence(_))));
        assert!(bucket_sensitivity_sweep(&[0], |_| unreachable!()).is_err());
    }
}
