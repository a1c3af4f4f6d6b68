//! Plain descriptive statistics over slices.

use serde::{Deserialize, Serialize};

/// Guard added to `σ³` in the skewness denominator.
pub const SKEW_GUARD: f64 = 1e-8;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Biased skewness `m3 / (σ³ + 1e-8)`.
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / (m2.powf(1.5) + SKEW_GUARD)
}

/// Linear-interpolated quantile of already sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Per-column affine scaling to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits on row-major `rows` with `cols` columns. Constant columns keep a
    /// unit scale.
    pub fn fit(rows: &[f64], cols: usize) -> Self {
        let n = if cols == 0 { 0 } else { rows.len() / cols };
        let mut mean = vec![0.0; cols];
        let mut sd = vec![1.0; cols];
        if n == 0 {
            return Self { mean, sd };
        }
        for row in rows.chunks(cols) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; cols];
        for row in rows.chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for (s, v) in sd.iter_mut().zip(var) {
            if v > 1e-12 {
                *s = v.sqrt();
            }
        }
        Self { mean, sd }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, rows: &mut [f64]) {
        let cols = self.dim();
        for row in rows.chunks_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let xs = [-1.0, 0.0, 1.0];
        assert_eq!(mean(&xs), 0.0);
        assert!((variance(&xs) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(skewness(&xs), 0.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs: Vec<f64> = (1..=8).map(f64::from).collect();
        assert!((quantile(&xs, 0.25) - 2.75).abs() < 1e-12);
        assert!((quantile(&xs, 0.5) - 4.5).abs() < 1e-12);
        assert!((quantile(&xs, 0.75) - 6.25).abs() < 1e-12);
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let mut rows = vec![1.0, 5.0, 3.0, 5.0];
        let s = Standardizer::fit(&rows, 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.sd, vec![1.0, 1.0]);
        s.apply(&mut rows);
        assert_eq!(rows, vec![-1.0, 0.0, 1.0, 0.0]);
    }
}
