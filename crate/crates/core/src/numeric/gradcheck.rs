//! Central finite-difference gradient oracle.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;
/// Step multipliers tried, in order, for an entry that misses the tolerance.
/// Rounding error in the difference quotient shrinks like `1/h`, so a wider
/// stencil resolves small gradients of large losses; a wrong analytic
/// gradient misses at every step.
pub const REFINE_STEPS: [f64; 2] = [10.0, 100.0];

/// Which parameter coordinates to perturb.
#[derive(Debug, Clone)]
pub enum Selection {
    All,
    /// Up to `per_param` random coordinates of every tensor, plus every
    /// coordinate of tensors whose name is listed in `exhaustive`.
    Sampled {
        per_param: usize,
        seed: u64,
        exhaustive: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Step that produced `numeric`.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences with step `h`. Parameter values are restored afterwards.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    f: F,
    selection: &Selection,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    g.accumulate_param_grads(store);

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    let mut rng = match selection {
        Selection::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Selection::All => None,
    };
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        let len = store.value(id).len();
        match (selection, rng.as_mut()) {
            (
                Selection::Sampled {
                    per_param,
                    exhaustive,
                    ..
                },
                Some(rng),
            ) if !exhaustive.iter().any(|n| n == store.name(id)) && len > *per_param => {
                let picked = sample(rng, len, *per_param);
                coords.extend(picked.into_iter().map(|i| (id, i)));
            }
            _ => coords.extend((0..len).map(|i| (id, i))),
        }
    }

    let mut entries = Vec::with_capacity(coords.len());
    let mut max_rel = 0.0f64;
    for (id, i) in coords {
        let analytic = store.grad(id).data()[i];
        let mut best = (f64::INFINITY, f64::NAN, h);
        for step in std::iter::once(h).chain(REFINE_STEPS.iter().map(|m| m * h)) {
            let numeric = central_difference(store, &f, id, i, step)?;
            let rel = rel_error(analytic, numeric);
            if rel < best.0 {
                best = (rel, numeric, step);
            }
            if rel < tol {
                break;
            }
        }
        let (rel, numeric, step) = best;
        max_rel = max_rel.max(rel);
        entries.push(GradCheckEntry {
            param: store.name(id).to_string(),
            index: i,
            analytic,
            numeric,
            rel_error: rel,
            step,
        });
    }
    store.zero_grad();
    Ok(GradCheckReport {
        entries,
        max_rel_error: max_rel,
        tol,
    })
}

fn central_difference<F>(store: &mut ParamStore, f: &F, id: ParamId, i: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let original = store.value(id).data()[i];
    store.value_mut(id).data_mut()[i] = original + h;
    let plus = eval(store, f);
    store.value_mut(id).data_mut()[i] = original - h;
    let minus = eval(store, f);
    store.value_mut(id).data_mut()[i] = original;
    Ok((plus? - minus?) / (2.0 * h))
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    Ok(g.scalar(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let report = finite_diff_check(
            &mut store,
            |g, s| {
                let x = g.param(s, w);
                let sq = g.square(x);
                let scaled = g.scale(sq, 1.5);
                Ok(g.sum(scaled))
            },
            &Selection::All,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.entries.len(), 3);
        // values restored
        assert_eq!(store.value(w).data(), &[0.3, -1.2, 2.0]);
    }

    #[test]
    fn wider_step_resolves_a_small_gradient_of_a_large_loss() {
        // 1e3 + 1e-5·w: rounding of the offset swamps the quotient at h = 1e-5
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.7));
        let report = finite_diff_check(
            &mut store,
            |g, s| {
                let x = g.param(s, w);
                let x = g.scale(x, 1e-5);
                Ok(g.add_scalar(x, 1e3))
            },
            &Selection::All,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.entries[0].step > 1e-5);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // abs(x) at x=0 uses subgradient 0 while central differences also give
        // 0; at x = 1e-6 the kink sits inside the stencil and must be flagged.
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1e-6));
        let report = finite_diff_check(
            &mut store,
            |g, s| {
                let x = g.param(s, w);
                Ok(g.abs(x))
            },
            &Selection::All,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
