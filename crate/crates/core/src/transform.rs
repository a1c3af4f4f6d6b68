//! Group-specific Box–Cox transform of correction factors.
//!
//! For a factor `b >= 0` in duration group `g`,
//!
//! ```text
//! T(b) = ((b + eps)^λ - 1) / λ     if |λ| > zero_branch_tol
//!        ln(b + eps)                otherwise
//! ```
//!
//! and the inverse maps a transformed value back to factor space, clamped at
//! zero. Both directions are differentiable in the input and in `λ`; on the
//! log branch the `λ`-derivative is the analytic limit (`ln²(b+eps)/2` for
//! the forward map, `-z²e^z/2` for the inverse).
//!
//! The power branch is evaluated as `expm1(λ·ln x)/λ`, and the inverse as
//! `exp(ln1p(λz)/λ)`, so both stay accurate right up to the branch switch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};
use crate::stats::SKEW_GUARD;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_ZERO_BRANCH_TOL: f64 = 1e-6;
/// `λ` is clamped into this range after every optimizer step.
pub const LAMBDA_RANGE: (f64, f64) = (-2.0, 3.0);
/// Inference clamps `λz + 1` to at least this value.
pub const DOMAIN_MARGIN: f64 = 1e-9;
/// Largest `ln(b + eps)` the differentiable inverse will produce.
pub const MAX_LOG_FACTOR: f64 = 30.0;
pub const DEFAULT_MIN_GROUP: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub lambdas: Vec<f64>,
    pub eps: f64,
    pub zero_branch_tol: f64,
}

impl TransformParams {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self {
            lambdas,
            eps: DEFAULT_EPS,
            zero_branch_tol: DEFAULT_ZERO_BRANCH_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("transform eps must be > 0, got {}", self.eps)));
        }
        if self.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("transform lambdas must be finite".into()));
        }
        Ok(())
    }

    fn lambda(&self, g: usize) -> Result<f64> {
        self.lambdas.get(g).copied().ok_or(Error::GroupOutOfRange {
            group: g,
            groups: self.lambdas.len(),
        })
    }

    pub fn forward(&self, b: f64, g: usize) -> Result<f64> {
        boxcox_forward(b, self.lambda(g)?, self.eps, self.zero_branch_tol)
    }

    pub fn inverse(&self, z: f64, g: usize) -> Result<f64> {
        boxcox_inverse(z, self.lambda(g)?, self.eps, self.zero_branch_tol)
    }

    pub fn inverse_clamped(&self, z: f64, g: usize) -> Result<f64> {
        Ok(boxcox_inverse_clamped(z, self.lambda(g)?, self.eps, self.zero_branch_tol))
    }
}

/// `Σ_{n>=2} (n-1) λ^(n-2) L^n / n!`, the λ-derivative of `expm1(λL)/λ`,
/// summed directly for small `|λL|`.
fn forward_dlambda_series(lambda: f64, l: f64) -> f64 {
    let mut sum = 0.0;
    // term_n = λ^(n-2) L^n / n!
    let mut term = l * l / 2.0;
    for n in 2..40 {
        let contrib = (n - 1) as f64 * term;
        sum += contrib;
        if contrib.abs() <= 1e-18 * sum.abs() {
            break;
        }
        term *= lambda * l / (n + 1) as f64;
    }
    sum
}

/// Value, `∂z/∂b` and `∂z/∂λ` of the forward transform.
pub fn forward_with_grads(b: f64, lambda: f64, eps: f64, tol: f64) -> (f64, f64, f64) {
    let x = (b + eps).max(crate::numeric::graph::LOG_GUARD);
    let l = x.ln();
    if lambda.abs() <= tol {
        return (l, 1.0 / x, 0.5 * l * l);
    }
    let t = lambda * l;
    let z = t.exp_m1() / lambda;
    let dz_db = (t - l).exp(); // x^(λ-1)
    let dz_dl = if t.abs() < 0.5 {
        forward_dlambda_series(lambda, l)
    } else {
        (t * t.exp() - t.exp_m1()) / (lambda * lambda)
    };
    (z, dz_db, dz_dl)
}

pub fn boxcox_forward(b: f64, lambda: f64, eps: f64, tol: f64) -> Result<f64> {
    if b < 0.0 || b.is_nan() {
        return Err(Error::NegativeFactor(b));
    }
    Ok(forward_with_grads(b, lambda, eps, tol).0)
}

/// `ln1p(λz)/λ` and its λ-derivative.
fn inverse_exponent(z: f64, lambda: f64) -> (f64, f64) {
    let t = lambda * z;
    let w = t.ln_1p() / lambda;
    let dw = if t.abs() < 0.1 {
        // Σ_{n>=2} (-1)^(n+1) (n-1) λ^(n-2) z^n / n
        let mut sum = 0.0;
        let mut pow = z * z; // λ^(n-2) z^n
        for n in 2..60 {
            let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
            let contrib = sign * (n - 1) as f64 * pow / n as f64;
            sum += contrib;
            if contrib.abs() <= 1e-18 * sum.abs() {
                break;
            }
            pow *= t;
        }
        sum
    } else {
        (t / (1.0 + t) - t.ln_1p()) / (lambda * lambda)
    };
    (w, dw)
}

/// Result of the differentiable inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseEval {
    pub b: f64,
    pub db_dz: f64,
    pub db_dlambda: f64,
    /// The input was outside the domain (or overflowed) and was clamped.
    pub clamped: bool,
}

/// Inverse transform with domain clamping; gradients are zero wherever a
/// clamp is active.
pub fn inverse_with_grads(z: f64, lambda: f64, eps: f64, tol: f64) -> InverseEval {
    let (w, dw_dz, dw_dl, mut clamped) = if lambda.abs() <= tol {
        (z, 1.0, -0.5 * z * z, false)
    } else if lambda * z + 1.0 <= DOMAIN_MARGIN {
        ((DOMAIN_MARGIN).ln() / lambda, 0.0, 0.0, true)
    } else {
        let (w, dw) = inverse_exponent(z, lambda);
        (w, 1.0 / (1.0 + lambda * z), dw, false)
    };
    let (w, dw_dz, dw_dl) = if w > MAX_LOG_FACTOR {
        clamped = true;
        (MAX_LOG_FACTOR, 0.0, 0.0)
    } else {
        (w, dw_dz, dw_dl)
    };
    let e = w.exp();
    let raw = e - eps;
    if raw <= 0.0 {
        return InverseEval {
            b: 0.0,
            db_dz: 0.0,
            db_dlambda: 0.0,
            clamped,
        };
    }
    InverseEval {
        b: raw,
        db_dz: e * dw_dz,
        db_dlambda: e * dw_dl,
        clamped,
    }
}

/// Exact inverse; errors when `λz + 1 <= 0` on the power branch.
pub fn boxcox_inverse(z: f64, lambda: f64, eps: f64, tol: f64) -> Result<f64> {
    if lambda.abs() > tol && lambda * z + 1.0 <= 0.0 {
        return Err(Error::Domain { z, lambda });
    }
    let w = if lambda.abs() <= tol {
        z
    } else {
        inverse_exponent(z, lambda).0
    };
    Ok((w.exp() - eps).max(0.0))
}

/// Serving-side inverse: out-of-domain inputs are pulled to
/// `λz + 1 = DOMAIN_MARGIN` instead of failing.
pub fn boxcox_inverse_clamped(z: f64, lambda: f64, eps: f64, tol: f64) -> f64 {
    let z = if lambda.abs() > tol && lambda * z + 1.0 <= DOMAIN_MARGIN {
        (DOMAIN_MARGIN - 1.0) / lambda
    } else {
        z
    };
    match boxcox_inverse(z, lambda, eps, tol) {
        Ok(b) => b,
        // The clamp above keeps λz + 1 > 0 up to rounding.
        Err(_) => (DOMAIN_MARGIN.ln() / lambda).exp(),
    }
}

/// Differentiable forward transform. `b` and `lambda` are same-length
/// vectors; `lambda` usually comes from gathering the per-group parameter by
/// sample group.
pub fn forward_var(g: &mut Graph, b: Var, lambda: Var, eps: f64, tol: f64) -> Result<Var> {
    let bv = g.value(b).clone();
    let lv = g.value(lambda).clone();
    if bv.shape() != lv.shape() {
        return Err(Error::shape("boxcox_forward", bv.shape(), lv.shape()));
    }
    let n = bv.len();
    let (mut z, mut db, mut dl) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&bi, &li) in bv.data().iter().zip(lv.data()) {
        if bi < 0.0 || bi.is_nan() {
            return Err(Error::NegativeFactor(bi));
        }
        let (zi, dbi, dli) = forward_with_grads(bi, li, eps, tol);
        z.push(zi);
        db.push(dbi);
        dl.push(dli);
    }
    let shape = bv.shape().to_vec();
    g.elementwise(
        Tensor::new(shape.clone(), z)?,
        vec![
            (b, Tensor::new(shape.clone(), db)?),
            (lambda, Tensor::new(shape, dl)?),
        ],
    )
}

/// Differentiable inverse transform. Returns the factor node and the number
/// of entries that needed a domain clamp.
pub fn inverse_var(g: &mut Graph, z: Var, lambda: Var, eps: f64, tol: f64) -> Result<(Var, usize)> {
    let zv = g.value(z).clone();
    let lv = g.value(lambda).clone();
    if zv.shape() != lv.shape() {
        return Err(Error::shape("boxcox_inverse", zv.shape(), lv.shape()));
    }
    let n = zv.len();
    let (mut b, mut dz, mut dl) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut clamped = 0;
    for (&zi, &li) in zv.data().iter().zip(lv.data()) {
        let e = inverse_with_grads(zi, li, eps, tol);
        clamped += usize::from(e.clamped);
        b.push(e.b);
        dz.push(e.db_dz);
        dl.push(e.db_dlambda);
    }
    let shape = zv.shape().to_vec();
    let out = g.elementwise(
        Tensor::new(shape.clone(), b)?,
        vec![
            (z, Tensor::new(shape.clone(), dz)?),
            (lambda, Tensor::new(shape, dl)?),
        ],
    )?;
    Ok((out, clamped))
}

/// Default width of the domain guard on network outputs.
pub const DEFAULT_DOMAIN_SOFTNESS: f64 = 0.05;

/// A raw network output mapped into the inverse domain, with the log factor
/// `q = ln(1 + λẑ)/λ` (so `b̂ = e^q - eps`) and all partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guarded {
    pub z: f64,
    pub dz_dr: f64,
    pub dz_dl: f64,
    pub q: f64,
    pub dq_dr: f64,
    pub dq_dl: f64,
    /// The guard changed the value.
    pub active: bool,
}

/// With `u = 1 + λr`, the guard keeps `1 + λẑ = u` for `u >= kappa` and
/// replaces it by `kappa²/(2·kappa - u)` below. The replacement is positive,
/// C1 at the joint and decays like `1/|u|`, so it never rounds to zero for
/// any realistic output. The log branch is untouched.
pub fn guarded_with_grads(r: f64, lambda: f64, kappa: f64, tol: f64) -> Guarded {
    if lambda.abs() <= tol {
        return Guarded {
            z: r,
            dz_dr: 1.0,
            dz_dl: 0.0,
            q: r,
            dq_dr: 1.0,
            dq_dl: -0.5 * r * r,
            active: false,
        };
    }
    let u = 1.0 + lambda * r;
    if u >= kappa {
        let (q, dq_dl) = inverse_exponent(r, lambda);
        return Guarded {
            z: r,
            dz_dr: 1.0,
            dz_dl: 0.0,
            q,
            dq_dr: 1.0 / u,
            dq_dl,
            active: false,
        };
    }
    let k2 = kappa * kappa;
    let d = k2 / (2.0 * kappa - u);
    let z = (d - 1.0) / lambda;
    let q = (2.0 * kappa.ln() - (2.0 * kappa - u).ln()) / lambda;
    // dd/du = d²/κ²
    let dd = d * d / k2;
    Guarded {
        z,
        dz_dr: dd,
        dz_dl: dd * r / lambda - z / lambda,
        q,
        dq_dr: d / k2,
        dq_dl: d * r / (k2 * lambda) - q / lambda,
        active: true,
    }
}

/// Differentiable guard: returns `ẑ` and the log factor `q`.
pub fn guarded_output_var(g: &mut Graph, raw: Var, lambda: Var, kappa: f64, tol: f64) -> Result<(Var, Var)> {
    let rv = g.value(raw).clone();
    let lv = g.value(lambda).clone();
    if rv.shape() != lv.shape() {
        return Err(Error::shape("domain_guard", rv.shape(), lv.shape()));
    }
    let n = rv.len();
    let mut cols: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    for (&ri, &li) in rv.data().iter().zip(lv.data()) {
        let e = guarded_with_grads(ri, li, kappa, tol);
        for (c, v) in cols.iter_mut().zip([e.z, e.dz_dr, e.dz_dl, e.q, e.dq_dr, e.dq_dl]) {
            c.push(v);
        }
    }
    let shape = rv.shape().to_vec();
    let [z, dz_dr, dz_dl, q, dq_dr, dq_dl] = cols;
    let t = |v: Vec<f64>| Tensor::new(shape.clone(), v);
    let z = g.elementwise(t(z)?, vec![(raw, t(dz_dr)?), (lambda, t(dz_dl)?)])?;
    let q = g.elementwise(t(q)?, vec![(raw, t(dq_dr)?), (lambda, t(dq_dl)?)])?;
    Ok((z, q))
}

/// `b = e^q - eps`, floored at zero. `q` above [`MAX_LOG_FACTOR`] is capped
/// with zero gradient; the second value counts capped entries.
pub fn factor_from_log_var(g: &mut Graph, q: Var, eps: f64) -> Result<(Var, usize)> {
    let qv = g.value(q).clone();
    let mut capped = 0;
    let (mut b, mut db) = (Vec::with_capacity(qv.len()), Vec::with_capacity(qv.len()));
    for &qi in qv.data() {
        let (qi, live) = if qi > MAX_LOG_FACTOR {
            capped += 1;
            (MAX_LOG_FACTOR, false)
        } else {
            (qi, true)
        };
        let e = qi.exp();
        if e - eps <= 0.0 {
            b.push(0.0);
            db.push(0.0);
        } else {
            b.push(e - eps);
            db.push(if live { e } else { 0.0 });
        }
    }
    let shape = qv.shape().to_vec();
    let out = g.elementwise(Tensor::new(shape.clone(), b)?, vec![(q, Tensor::new(shape, db)?)])?;
    Ok((out, capped))
}

/// Per-group mini-batch moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub count: usize,
    pub mean: f64,
    /// Population (1/n) variance.
    pub var: f64,
    /// `m3 / (σ³ + 1e-8)`.
    pub skew: f64,
    /// `false` when the group has fewer than `min_group` samples.
    pub active: bool,
}

pub fn batch_moments(z: &[f64], groups: &[usize], k: usize, min_group: usize) -> Vec<GroupMoments> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&v, &g) in z.iter().zip(groups) {
        if g < k {
            members[g].push(v);
        }
    }
    members
        .iter()
        .map(|vals| {
            let count = vals.len();
            if count == 0 {
                return GroupMoments {
                    count,
                    mean: f64::NAN,
                    var: f64::NAN,
                    skew: f64::NAN,
                    active: false,
                };
            }
            let n = count as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
            GroupMoments {
                count,
                mean,
                var,
                skew: m3 / (var.powf(1.5) + SKEW_GUARD),
                active: count >= min_group,
            }
        })
        .collect()
}

/// Graph nodes holding one group's moments.
#[derive(Debug, Clone, Copy)]
pub struct MomentVars {
    pub mean: Var,
    pub var: Var,
    pub skew: Var,
}

/// Differentiable counterpart of [`batch_moments`]; masked groups are
/// `None`.
pub fn batch_moments_var(
    g: &mut Graph,
    z: Var,
    groups: &[usize],
    k: usize,
    min_group: usize,
) -> Result<Vec<Option<MomentVars>>> {
    let mut index: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &gr) in groups.iter().enumerate() {
        if gr >= k {
            return Err(Error::GroupOutOfRange { group: gr, groups: k });
        }
        index[gr].push(i);
    }
    let mut out = Vec::with_capacity(k);
    for idx in index {
        if idx.len() < min_group || idx.is_empty() {
            out.push(None);
            continue;
        }
        let zg = g.gather(z, &idx)?;
        let mean = g.mean(zg);
        let neg_mean = g.neg(mean);
        let centered = g.add_scalar_var(zg, neg_mean)?;
        let sq = g.square(centered);
        let var = g.mean(sq);
        let cube = g.mul(sq, centered)?;
        let m3 = g.mean(cube);
        let sd3 = g.powf(var, 1.5);
        let denom = g.add_scalar(sd3, SKEW_GUARD);
        let skew = g.div(m3, denom)?;
        out.push(Some(MomentVars { mean, var, skew }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::rel_error;
    use proptest::prelude::*;

    const TOL: f64 = DEFAULT_ZERO_BRANCH_TOL;

    #[test]
    fn closed_forms() {
        // λ = 1 is a shift, λ = 0.5 is 2(√x - 1); eps → 0
        assert!((boxcox_forward(4.0, 1.0, 1e-15, TOL).unwrap() - 3.0).abs() < 1e-12);
        assert!((boxcox_forward(4.0, 0.5, 1e-15, TOL).unwrap() - 2.0).abs() < 1e-12);
        assert!((boxcox_inverse(3.0, 1.0, 1e-15, TOL).unwrap() - 4.0).abs() < 1e-12);
        let b = boxcox_inverse(0.0, 0.0, 1e-6, TOL).unwrap();
        assert!((b - (1.0 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn negative_factor_is_rejected() {
        assert!(matches!(boxcox_forward(-0.1, 0.5, DEFAULT_EPS, TOL), Err(Error::NegativeFactor(_))));
    }

    #[test]
    fn near_zero_lambda_matches_log_branch() {
        let z = boxcox_forward(2.0, 1e-6, DEFAULT_EPS, 1e-7).unwrap();
        assert!((z - (2.0 + DEFAULT_EPS).ln()).abs() < 1e-4);
        // one step above the switch vs on it, over two decades either side
        for i in 0..=400 {
            let b = 10f64.powf(-2.0 + i as f64 / 100.0);
            let above = boxcox_forward(b, TOL * (1.0 + 1e-9), DEFAULT_EPS, TOL).unwrap();
            let below = boxcox_forward(b, TOL, DEFAULT_EPS, TOL).unwrap();
            assert!((above - below).abs() <= 1e-4, "b = {b}");
            let neg = boxcox_forward(b, -TOL * (1.0 + 1e-9), DEFAULT_EPS, TOL).unwrap();
            assert!((neg - below).abs() <= 1e-4, "b = {b}");
        }
    }

    #[test]
    fn roundtrip_grid() {
        for &b in &[0.1, 1.0, 10.0] {
            for &l in &[-0.5, 0.0, 0.5, 1.0] {
                let z = boxcox_forward(b, l, DEFAULT_EPS, TOL).unwrap();
                let back = boxcox_inverse(z, l, DEFAULT_EPS, TOL).unwrap();
                assert!(((back - b) / b).abs() < 1e-8, "b={b} λ={l}");
            }
        }
    }

    #[test]
    fn domain_error_carries_inputs() {
        match boxcox_inverse(-3.0, 0.5, DEFAULT_EPS, TOL) {
            Err(Error::Domain { z, lambda }) => {
                assert_eq!(z, -3.0);
                assert_eq!(lambda, 0.5);
            }
            other => panic!("{other:?}"),
        }
        let b = boxcox_inverse_clamped(-3.0, 0.5, DEFAULT_EPS, TOL);
        assert!(b.is_finite() && b >= 0.0);
    }

    #[test]
    fn lambda_gradient_matches_central_difference() {
        let h = 1e-5;
        for &b in &[0.05, 0.7, 1.0, 3.0, 40.0] {
            for &l in &[-1.2, -0.3, 0.02, 0.5, 1.0, 2.5] {
                let (_, db, dl) = forward_with_grads(b, l, DEFAULT_EPS, TOL);
                let f = |bb: f64, ll: f64| forward_with_grads(bb, ll, DEFAULT_EPS, TOL).0;
                let fd_l = (f(b, l + h) - f(b, l - h)) / (2.0 * h);
                let fd_b = (f(b + h * b, l) - f(b - h * b, l)) / (2.0 * h * b);
                assert!(rel_error(dl, fd_l) < 1e-4, "dλ b={b} λ={l}: {dl} vs {fd_l}");
                assert!(rel_error(db, fd_b) < 1e-4, "db b={b} λ={l}: {db} vs {fd_b}");
            }
        }
    }

    #[test]
    fn inverse_gradients_match_central_difference() {
        let h = 1e-6;
        for &z in &[-0.8, -0.1, 0.0, 0.3, 1.5] {
            for &l in &[-0.4, 0.01, 0.5, 1.0, 2.0] {
                if l * z + 1.0 <= 0.1 {
                    continue;
                }
                let e = inverse_with_grads(z, l, DEFAULT_EPS, TOL);
                assert!(!e.clamped);
                let f = |zz: f64, ll: f64| inverse_with_grads(zz, ll, DEFAULT_EPS, TOL).b;
                let fd_z = (f(z + h, l) - f(z - h, l)) / (2.0 * h);
                let fd_l = (f(z, l + h) - f(z, l - h)) / (2.0 * h);
                assert!(rel_error(e.db_dz, fd_z) < 1e-4, "dz z={z} λ={l}");
                assert!(rel_error(e.db_dlambda, fd_l) < 1e-4, "dλ z={z} λ={l}: {} vs {fd_l}", e.db_dlambda);
            }
        }
    }

    #[test]
    fn log_branch_lambda_gradients_are_the_limits() {
        let (_, _, dl) = forward_with_grads(3.0, 0.0, 0.0, TOL);
        assert!((dl - 0.5 * 3f64.ln().powi(2)).abs() < 1e-12);
        let (_, _, near) = forward_with_grads(3.0, 1e-5, 0.0, TOL);
        assert!((near - dl).abs() < 1e-4);
        let e = inverse_with_grads(0.7, 0.0, 0.0, TOL);
        assert!((e.db_dlambda + 0.5 * 0.49 * 0.7f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn moments_symmetric_and_masked() {
        let m = batch_moments(&[-1.0, 0.0, 1.0], &[0, 0, 0], 2, 3);
        assert_eq!(m[0].mean, 0.0);
        assert!((m[0].var - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m[0].skew, 0.0);
        assert!(m[0].active);
        assert!(!m[1].active);
        let m = batch_moments(&[1.0, 2.0, 3.0], &[0, 0, 0], 1, 8);
        assert!(!m[0].active);
    }

    #[test]
    fn moments_of_three_zeros_and_a_three() {
        // direct moment formula: deviations (-.75,-.75,-.75,2.25)
        let m = batch_moments(&[0.0, 0.0, 0.0, 3.0], &[0; 4], 1, 1);
        assert!((m[0].mean - 0.75).abs() < 1e-15);
        assert!((m[0].var - 1.6875).abs() < 1e-15);
        let m3 = (3.0 * (-0.75f64).powi(3) + 2.25f64.powi(3)) / 4.0;
        let skew = m3 / (1.6875f64.powf(1.5) + 1e-8);
        assert!((m[0].skew - skew).abs() < 1e-12);
        assert!((skew - 1.1547005).abs() < 1e-6);
    }

    #[test]
    fn graph_moments_match_plain_moments() {
        let z = [0.3, -1.0, 2.5, 0.1, 0.0, 4.0, -0.2, 1.1, 0.9, 0.4];
        let groups = [0, 1, 0, 0, 1, 0, 1, 0, 0, 1];
        let plain = batch_moments(&z, &groups, 2, 4);
        let mut g = Graph::new();
        let zv = g.variable(Tensor::vector(z.to_vec()));
        let vars = batch_moments_var(&mut g, zv, &groups, 2, 4).unwrap();
        for (p, v) in plain.iter().zip(vars) {
            let v = v.unwrap();
            assert!((g.scalar(v.mean) - p.mean).abs() < 1e-14);
            assert!((g.scalar(v.var) - p.var).abs() < 1e-14);
            assert!((g.scalar(v.skew) - p.skew).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_is_identity_inside_the_domain() {
        for (r, l) in [(0.3, 0.8), (-1.0, 0.5), (2.0, -0.3), (5.0, 1e-9)] {
            let e = guarded_with_grads(r, l, DEFAULT_DOMAIN_SOFTNESS, TOL);
            assert!(!e.active);
            assert_eq!(e.z, r);
            let b = boxcox_inverse(r, l, DEFAULT_EPS, TOL).unwrap();
            assert!(((e.q.exp() - DEFAULT_EPS) - b).abs() < 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn guard_keeps_outputs_in_the_domain() {
        let k = DEFAULT_DOMAIN_SOFTNESS;
        for (r, l) in [(-1.3, 0.8), (-50.0, 0.8), (-1e4, 1.5), (4.0, -0.5), (1e3, -2.0)] {
            let e = guarded_with_grads(r, l, k, TOL);
            assert!(e.active);
            assert!(1.0 + l * e.z > 0.0, "r={r} λ={l}");
            assert!(e.q.is_finite());
        }
        // continuous and C1 at u = kappa
        let l = 0.8;
        let r0 = (k - 1.0) / l;
        let (a, b) = (guarded_with_grads(r0 - 1e-9, l, k, TOL), guarded_with_grads(r0 + 1e-9, l, k, TOL));
        assert!((a.z - b.z).abs() < 1e-8 && (a.q - b.q).abs() < 1e-6);
        assert!((a.dz_dr - b.dz_dr).abs() < 1e-6);
    }

    #[test]
    fn guard_gradients_match_central_difference() {
        let k = DEFAULT_DOMAIN_SOFTNESS;
        let h = 1e-6;
        for (r, l) in [(-1.3, 0.8), (-3.0, 0.6), (0.5, 1.2), (3.0, -0.4), (-0.2, -1.0), (0.7, 0.0)] {
            let e = guarded_with_grads(r, l, k, TOL);
            let f = |r: f64, l: f64| guarded_with_grads(r, l, k, TOL);
            let nzr = (f(r + h, l).z - f(r - h, l).z) / (2.0 * h);
            let nqr = (f(r + h, l).q - f(r - h, l).q) / (2.0 * h);
            assert!(rel_error(e.dz_dr, nzr) < 1e-5, "dz/dr at r={r} λ={l}");
            assert!(rel_error(e.dq_dr, nqr) < 1e-5, "dq/dr at r={r} λ={l}");
            if l != 0.0 {
                let nzl = (f(r, l + h).z - f(r, l - h).z) / (2.0 * h);
                let nql = (f(r, l + h).q - f(r, l - h).q) / (2.0 * h);
                assert!(rel_error(e.dz_dl, nzl) < 1e-5, "dz/dλ at r={r} λ={l}");
                assert!(rel_error(e.dq_dl, nql) < 1e-5, "dq/dλ at r={r} λ={l}");
            }
        }
    }

    proptest! {
        #[test]
        fn strictly_increasing_in_b(l in -2.0f64..3.0, a in 0.0f64..1e3, d in 1e-3f64..10.0) {
            let lo = boxcox_forward(a, l, DEFAULT_EPS, TOL).unwrap();
            let hi = boxcox_forward(a + d, l, DEFAULT_EPS, TOL).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn roundtrip(l in -1.0f64..2.0, logb in -3.0f64..3.0) {
            let b = 10f64.powf(logb);
            let z = boxcox_forward(b, l, DEFAULT_EPS, TOL).unwrap();
            let back = boxcox_inverse(z, l, DEFAULT_EPS, TOL).unwrap();
            prop_assert!(((back - b) / b).abs() < 1e-8, "b={} λ={} back={}", b, l, back);
        }
    }
}
