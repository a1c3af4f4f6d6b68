//! Pointwise and pairwise accuracy metrics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_PAIRS: u64 = 5_000_000;

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} labels vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    if y.is_empty() {
        return Err(Error::Metric("MAE of an empty sample".into()));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Xauc {
    pub value: f64,
    /// Size of the comparable-pair set `{(i, j): y_i != y_j}`.
    pub comparable_pairs: u64,
    /// Pairs actually scored.
    pub evaluated_pairs: u64,
    pub sampled: bool,
}

/// Fenwick tree over prediction ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Exact concordance over all comparable pairs in `O(n log n)`: returns
/// `(concordant + ties / 2, comparable pairs)`.
fn exhaustive_counts(y: &[f64], y_hat: &[f64]) -> (f64, u64) {
    let n = y.len();
    let mut by_pred: Vec<usize> = (0..n).collect();
    by_pred.sort_by(|&a, &b| y_hat[a].total_cmp(&y_hat[b]));
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for w in 0..n {
        if w > 0 && y_hat[by_pred[w]] != y_hat[by_pred[w - 1]] {
            r += 1;
        }
        rank[by_pred[w]] = r;
    }
    let mut by_label: Vec<usize> = (0..n).collect();
    by_label.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    let mut tree = Fenwick::new(r + 1);
    let mut inserted = 0u64;
    let mut score2 = 0u64; // twice the score, kept integral
    let mut pairs = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && y[by_label[end]] == y[by_label[start]] {
            end += 1;
        }
        // Every earlier element has a strictly smaller label.
        for &j in &by_label[start..end] {
            let lower = tree.below(rank[j]);
            let tied = tree.below(rank[j] + 1) - lower;
            score2 += 2 * lower + tied;
            pairs += inserted;
        }
        for &j in &by_label[start..end] {
            tree.add(rank[j]);
        }
        inserted += (end - start) as u64;
        start = end;
    }
    (score2 as f64 / 2.0, pairs)
}

fn comparable_pairs(y: &[f64]) -> u64 {
    let n = y.len() as u64;
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for v in y {
        let key = if *v == 0.0 { 0 } else { v.to_bits() };
        *counts.entry(key).or_default() += 1;
    }
    n * n.saturating_sub(1) / 2 - counts.values().map(|c| c * (c - 1) / 2).sum::<u64>()
}

/// Fraction of comparable pairs ordered the same way by `y_hat` as by `y`,
/// with prediction ties scored one half. Uses uniform pair sampling when the
/// comparable set exceeds `max_pairs`.
pub fn xauc(y: &[f64], y_hat: &[f64], max_pairs: Option<u64>, seed: u64) -> Result<Xauc> {
    check_lengths(y, y_hat)?;
    let total = comparable_pairs(y);
    if total == 0 {
        return Err(Error::Metric("XAUC needs at least one pair with distinct labels".into()));
    }
    let cap = max_pairs.unwrap_or(DEFAULT_MAX_PAIRS);
    if total <= cap {
        let (score, pairs) = exhaustive_counts(y, y_hat);
        debug_assert_eq!(pairs, total);
        return Ok(Xauc {
            value: score / total as f64,
            comparable_pairs: total,
            evaluated_pairs: total,
            sampled: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.len();
    let mut score = 0.0;
    let mut drawn = 0u64;
    while drawn < cap {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if y[i] == y[j] {
            continue;
        }
        let a = (y_hat[i] - y_hat[j]) * (y[i] - y[j]);
        score += if y_hat[i] == y_hat[j] {
            0.5
        } else if a > 0.0 {
            1.0
        } else {
            0.0
        };
        drawn += 1;
    }
    Ok(Xauc {
        value: score / cap as f64,
        comparable_pairs: total,
        evaluated_pairs: cap,
        sampled: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUserXauc {
    /// Pair-count-weighted mean of within-user XAUC.
    pub value: f64,
    pub users: usize,
    pub comparable_pairs: u64,
}

/// Within-user XAUC averaged with weights equal to each user's comparable
/// pair count. Users without a comparable pair are skipped.
pub fn per_user_xauc(users: &[u64], y: &[f64], y_hat: &[f64]) -> Result<PerUserXauc> {
    check_lengths(y, y_hat)?;
    if users.len() != y.len() {
        return Err(Error::Metric("user ids and labels differ in length".into()));
    }
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, &u) in users.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let mut keys: Vec<u64> = groups.keys().copied().collect();
    keys.sort_unstable();
    let (mut score, mut pairs, mut qualifying) = (0.0, 0u64, 0usize);
    for u in keys {
        let idx = &groups[&u];
        let yu: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let pu: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
        let (s, p) = exhaustive_counts(&yu, &pu);
        if p > 0 {
            score += s;
            pairs += p;
            qualifying += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Metric("no user has a comparable pair".into()));
    }
    Ok(PerUserXauc {
        value: score / pairs as f64,
        users: qualifying,
        comparable_pairs: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(y: &[f64], p: &[f64]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in i + 1..y.len() {
                if y[i] == y[j] {
                    continue;
                }
                n += 1.0;
                let d = (p[i] - p[j]) * (y[i] - y[j]);
                s += if p[i] == p[j] { 0.5 } else if d > 0.0 { 1.0 } else { 0.0 };
            }
        }
        s / n
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 1.0]).unwrap(), 1.5);
        assert_eq!(mae(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn three_pair_example() {
        let x = xauc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], None, 0).unwrap();
        assert!((x.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(x.comparable_pairs, 3);
    }

    #[test]
    fn concordant_reversed_and_degenerate() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(xauc(&y, &[10.0, 20.0, 30.0, 40.0], None, 0).unwrap().value, 1.0);
        assert_eq!(xauc(&y, &[4.0, 3.0, 2.0, 1.0], None, 0).unwrap().value, 0.0);
        assert_eq!(xauc(&y, &[1.0; 4], None, 0).unwrap().value, 0.5);
        assert!(xauc(&[2.0, 2.0], &[1.0, 3.0], None, 0).is_err());
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(2..60);
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect();
            let p: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect();
            if y.iter().all(|v| *v == y[0]) {
                continue;
            }
            assert!((xauc(&y, &p, None, 0).unwrap().value - brute(&y, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn per_user_cases() {
        let users = [1, 1, 1, 2, 2];
        let y = [1.0, 2.0, 3.0, 5.0, 1.0];
        let p = [1.0, 2.0, 3.0, 9.0, 0.0];
        assert_eq!(per_user_xauc(&users, &y, &p).unwrap().value, 1.0);
        let one = per_user_xauc(&[7, 7, 7], &[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((one.value - 2.0 / 3.0).abs() < 1e-15);
        assert!(per_user_xauc(&[1, 2], &[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
