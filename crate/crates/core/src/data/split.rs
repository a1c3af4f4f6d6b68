use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::impression::Impression;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// `(train, val, test)`.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {:?}",
                self.fractions
            )));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` rows; ties favour train, then
    /// val.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let quotas: Vec<f64> = self.fractions.iter().map(|f| f * n as f64).collect();
        let mut sizes = [0usize; 3];
        for (s, q) in sizes.iter_mut().zip(&quotas) {
            *s = q.floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        let mut left = n - sizes.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Total order on impressions, used to make splitting independent of the
/// input order.
pub fn canonical_cmp(a: &Impression, b: &Impression) -> Ordering {
    a.user_id
        .cmp(&b.user_id)
        .then(a.item_id.cmp(&b.item_id))
        .then(a.duration_s.total_cmp(&b.duration_s))
        .then(a.watch_time_s.total_cmp(&b.watch_time_s))
        .then_with(|| {
            a.features
                .iter()
                .zip(&b.features)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.aux_labels.cmp(&b.aux_labels))
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Impression>,
    pub val: Vec<Impression>,
    pub test: Vec<Impression>,
}

/// Random disjoint partition. The data is first sorted canonically and then
/// shuffled with the seed, so membership does not depend on input order.
pub fn split(data: &[Impression], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut rows = data.to_vec();
    rows.sort_by(canonical_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rows.shuffle(&mut rng);
    let [n_train, n_val, _] = spec.sizes(rows.len());
    let test = rows.split_off(n_train + n_val);
    let val = rows.split_off(n_train);
    Ok(Splits {
        train: rows,
        val,
        test,
    })
}
