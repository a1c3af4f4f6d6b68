//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] walks it in reverse. Parameters live outside the graph
//! in a [`ParamStore`]; [`Graph::param`] binds a parameter as a leaf and
//! [`Graph::accumulate_param_grads`] copies the leaf gradients back.
//!
//! Constants, detached values and frozen parameters never require a
//! gradient, so nothing upstream of them receives one. This is how
//! stop-gradient is expressed.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied to arguments of `log` and bases of `pow`.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    #[serde(default)]
    pub frozen: bool,
}

/// Owns every trainable tensor of a model together with its gradient.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Gradient of a parameter; zeros if none was accumulated.
    pub fn grad(&self, id: ParamId) -> Tensor {
        let p = &self.params[id.0];
        p.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
    }

    pub fn has_grad(&self, id: ParamId) -> bool {
        self.params[id.0].grad.is_some()
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// Same-shape elementwise op with precomputed local derivatives, one
    /// tensor per parent.
    Elementwise(Vec<(Var, Tensor)>),
    AddRow(Var, Var),
    AddScalarVar(Var, Var),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        b_transposed: bool,
    },
    Scale(Var, f64),
    Softmax(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Variance(Var),
    MeanTokens(Var),
    Gather(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    Reshape(Var),
    TokenLinear {
        x: Var,
        w: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient reaching `v` in the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not tied to a parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !p.frozen)
    }

    /// Stop-gradient: same value, no path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Records an elementwise node whose local derivatives have already been
    /// evaluated. Every derivative tensor must have the output's shape.
    pub fn elementwise(&mut self, value: Tensor, partials: Vec<(Var, Tensor)>) -> Result<Var> {
        for (p, d) in &partials {
            same_shape("elementwise", &value, d)?;
            same_shape("elementwise", &value, self.value(*p))?;
        }
        let rg = partials.iter().any(|(p, _)| self.rg(*p));
        let partials = if rg {
            partials.into_iter().filter(|(p, _)| self.rg(*p)).collect()
        } else {
            Vec::new()
        };
        Ok(self.push(value, Op::Elementwise(partials), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        let mut der = Vec::with_capacity(xv.len());
        for &v in xv.data() {
            let (y, d) = f(v);
            out.push(y);
            der.push(d);
        }
        let shape = xv.shape().to_vec();
        let value = Tensor::new(shape.clone(), out).expect("unary shape");
        let d = Tensor::new(shape, der).expect("unary shape");
        let rg = self.rg(x);
        let partials = if rg { vec![(x, d)] } else { Vec::new() };
        self.push(value, Op::Elementwise(partials), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ones = Tensor::full(v.shape(), 1.0);
        self.elementwise(v, vec![(a, ones.clone()), (b, ones)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ones = Tensor::full(v.shape(), 1.0);
        let neg = Tensor::full(v.shape(), -1.0);
        self.elementwise(v, vec![(a, ones), (b, neg)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.zip_map(&bv, |x, y| x * y);
        self.elementwise(v, vec![(a, bv), (b, av)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.zip_map(&bv, |x, y| x / y);
        let da = bv.map(|y| 1.0 / y);
        let db = av.zip_map(&bv, |x, y| -x / (y * y));
        self.elementwise(v, vec![(a, da), (b, db)])
    }

    /// Elementwise `base^exponent` with the base guarded at [`LOG_GUARD`].
    pub fn pow(&mut self, base: Var, exponent: Var) -> Result<Var> {
        same_shape("pow", self.value(base), self.value(exponent))?;
        let bv = self.value(base).clone();
        let ev = self.value(exponent).clone();
        let n = bv.len();
        let mut out = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut de = Vec::with_capacity(n);
        for (&x, &p) in bv.data().iter().zip(ev.data()) {
            let guarded = x.max(LOG_GUARD);
            let y = guarded.powf(p);
            out.push(y);
            db.push(if x >= LOG_GUARD { p * guarded.powf(p - 1.0) } else { 0.0 });
            de.push(y * guarded.ln());
        }
        let shape = bv.shape().to_vec();
        let v = Tensor::new(shape.clone(), out)?;
        self.elementwise(
            v,
            vec![
                (base, Tensor::new(shape.clone(), db)?),
                (exponent, Tensor::new(shape, de)?),
            ],
        )
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, |v| {
            let g = v.max(LOG_GUARD);
            let d = if v >= LOG_GUARD { p * g.powf(p - 1.0) } else { 0.0 };
            (g.powf(p), d)
        })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v * v, 2.0 * v))
    }

    /// Natural log with the argument guarded at [`LOG_GUARD`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            if v >= LOG_GUARD {
                (v.ln(), 1.0 / v)
            } else {
                (LOG_GUARD.ln(), 0.0)
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let e = v.exp();
            (e, e)
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let t = v.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let s = sigmoid(v);
            (s, s * (1.0 - s))
        })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |v| (softplus(v), sigmoid(v)))
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let s = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v.abs(), s)
        })
    }

    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        self.unary(x, |v| if v > min { (v, 1.0) } else { (min, 0.0) })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| (v + c, 1.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, c), rg)
    }

    /// `x[i, :] + bias` for a 2-D `x` of shape `[n, c]` and a `[c]` bias.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.shape().len() != 2 || bv.len() != xv.shape()[1] {
            return Err(Error::shape("add_row", xv.shape(), bv.shape()));
        }
        let c = bv.len();
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// `x + s` where `s` is a one-element tensor broadcast over `x`.
    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape(
                "add_scalar_var",
                self.value(x).shape(),
                self.value(s).shape(),
            ));
        }
        let c = self.scalar(s);
        let v = self.value(x).map(|v| v + c);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(v, Op::AddScalarVar(x, s), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]` (or `[B, n, k]` when
    /// `b_transposed`).
    pub fn bmm(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let ok_rank = av.shape().len() == 3 && bv.shape().len() == 3;
        if !ok_rank || av.shape()[0] != bv.shape()[0] {
            return Err(Error::shape("bmm", av.shape(), bv.shape()));
        }
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (kb, n) = if b_transposed {
            (bv.shape()[2], bv.shape()[1])
        } else {
            (bv.shape()[1], bv.shape()[2])
        };
        if kb != k {
            return Err(Error::shape("bmm", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                false,
                &bv.data()[i * k * n..(i + 1) * k * n],
                b_transposed,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        let v = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(
            v,
            Op::BatchMatMul {
                a,
                b,
                b_transposed,
            },
            rg,
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let last = *xv.shape().last().unwrap_or(&1);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(last.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(Error::shape("concat", self.value(parts[0]).shape(), v.shape()));
            }
            total += v.shape()[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let v = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.sum() / xv.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Population (1/n) variance over all elements.
    pub fn variance(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let m = xv.sum() / n;
        let var = xv.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(var), Op::Variance(x), rg)
    }

    /// Mean over the token axis: `[B, T, d] -> [B, d]`.
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::shape("mean_tokens", xv.shape(), &[0, 0, 0]));
        }
        let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            for j in 0..t {
                let base = (i * t + j) * d;
                for k in 0..d {
                    out[i * d + k] += xv.data()[base + k] / t as f64;
                }
            }
        }
        let rg = self.rg(x);
        let v = Tensor::new(vec![b, d], out)?;
        Ok(self.push(v, Op::MeanTokens(x), rg))
    }

    /// Selects rows (entries along the leading dimension).
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.rows();
        let c = xv.cols();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= rows {
                return Err(Error::shape("gather", xv.shape(), &[i]));
            }
            out.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = index.len();
        let rg = self.rg(x);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Gather(x, index.to_vec()), rg))
    }

    /// Inverse of [`Graph::gather`]: writes row `r` of `x` to row
    /// `index[r]` of a zero tensor with `rows` rows. Indices must be unique.
    pub fn scatter(&mut self, x: Var, index: &[usize], rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != index.len() {
            return Err(Error::shape("scatter", xv.shape(), &[index.len()]));
        }
        let c = xv.cols();
        let mut shape = xv.shape().to_vec();
        shape[0] = rows;
        let mut out = Tensor::zeros(&shape);
        for (r, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(Error::shape("scatter", xv.shape(), &[i]));
            }
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&xv.data()[r * c..(r + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scatter(x, index.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Per-token affine map: `x[i, m, :] · w[m] + b[m]` for
    /// `x: [B, M, din]`, `w: [M, din, dout]`, `b: [M, dout]`.
    pub fn token_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let xs = xv.shape();
        let ws = wv.shape();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || xs[2] != ws[1] {
            return Err(Error::shape("token_linear", xs, ws));
        }
        let (batch, m, din, dout) = (xs[0], xs[1], xs[2], ws[2]);
        if bv.shape() != [m, dout] {
            return Err(Error::shape("token_linear", ws, bv.shape()));
        }
        let mut out = vec![0.0; batch * m * dout];
        for i in 0..batch {
            for t in 0..m {
                let xrow = &xv.data()[(i * m + t) * din..(i * m + t + 1) * din];
                let orow = &mut out[(i * m + t) * dout..(i * m + t + 1) * dout];
                orow.copy_from_slice(&bv.data()[t * dout..(t + 1) * dout]);
                for (p, &xp) in xrow.iter().enumerate() {
                    let wrow = &wv.data()[(t * din + p) * dout..(t * din + p + 1) * dout];
                    for (o, &wq) in orow.iter_mut().zip(wrow) {
                        *o += xp * wq;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let v = Tensor::new(vec![batch, m, dout], out)?;
        Ok(self.push(v, Op::TokenLinear { x, w, b }, rg))
    }

    fn add_grad(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from a one-element output. Gradients accumulate; a
    /// second call adds to the first.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.value(output).shape().to_vec();
        if !self.value(output).is_scalar() {
            return Err(Error::NonScalarOutput(out_shape));
        }
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.rg(output) {
            return Ok(());
        }
        self.add_grad(output, Tensor::full(&out_shape, 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &Tensor) -> Result<()> {
        // Take the op out temporarily to appease the borrow checker.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param(_) => {}
            Op::Elementwise(partials) => {
                for (p, d) in partials {
                    self.add_grad(*p, g.zip_map(d, |a, b| a * b));
                }
            }
            Op::AddRow(x, b) => {
                let c = self.value(*b).len();
                let mut gb = vec![0.0; c];
                for (k, v) in g.data().iter().enumerate() {
                    gb[k % c] += v;
                }
                let bshape = self.value(*b).shape().to_vec();
                self.add_grad(*x, g.clone());
                self.add_grad(*b, Tensor::new(bshape, gb)?);
            }
            Op::AddScalarVar(x, s) => {
                let sshape = self.value(*s).shape().to_vec();
                self.add_grad(*x, g.clone());
                self.add_grad(*s, Tensor::new(sshape, vec![g.sum()])?);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, false);
                    self.add_grad(*a, Tensor::new(vec![m, k], ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, false);
                    self.add_grad(*b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::BatchMatMul {
                a,
                b,
                b_transposed,
            } => {
                let ashape = self.value(*a).shape().to_vec();
                let bshape = self.value(*b).shape().to_vec();
                let (batch, m, k) = (ashape[0], ashape[1], ashape[2]);
                let n = g.shape()[2];
                let bt = *b_transposed;
                if self.rg(*a) {
                    let mut ga = vec![0.0; batch * m * k];
                    let bv = self.value(*b).data();
                    for t in 0..batch {
                        // dA = G · B^T, where B is stored (k×n) or (n×k).
                        gemm(
                            m,
                            n,
                            k,
                            &g.data()[t * m * n..(t + 1) * m * n],
                            false,
                            &bv[t * k * n..(t + 1) * k * n],
                            !bt,
                            &mut ga[t * m * k..(t + 1) * m * k],
                            false,
                        );
                    }
                    self.add_grad(*a, Tensor::new(ashape.clone(), ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; batch * k * n];
                    let av = self.value(*a).data();
                    for t in 0..batch {
                        let (gs, as_) = (
                            &g.data()[t * m * n..(t + 1) * m * n],
                            &av[t * m * k..(t + 1) * m * k],
                        );
                        let dst = &mut gb[t * k * n..(t + 1) * k * n];
                        if bt {
                            // B stored (n×k): dB = G^T · A
                            gemm(n, m, k, gs, true, as_, false, dst, false);
                        } else {
                            // dB = A^T · G
                            gemm(k, m, n, as_, true, gs, false, dst, false);
                        }
                    }
                    self.add_grad(*b, Tensor::new(bshape, gb)?);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.add_grad(*x, g.map(|v| v * c));
            }
            Op::Softmax(x) => {
                let s = self.nodes[i].value.clone();
                let last = *s.shape().last().unwrap_or(&1);
                let mut gx = s.clone();
                for ((srow, grow), out) in s
                    .data()
                    .chunks(last)
                    .zip(g.data().chunks(last))
                    .zip(gx.data_mut().chunks_mut(last))
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((o, &sv), &gv) in out.iter_mut().zip(srow).zip(grow) {
                        *o = sv * (gv - dot);
                    }
                }
                self.add_grad(*x, gx);
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.add_grad(p, Tensor::new(vec![rows, w], gp)?);
                    }
                    offset += w;
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                let shape = self.value(*x).shape().to_vec();
                self.add_grad(*x, Tensor::full(&shape, gv));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = g.item() / xv.len() as f64;
                let shape = xv.shape().to_vec();
                self.add_grad(*x, Tensor::full(&shape, gv));
            }
            Op::Variance(x) => {
                let xv = self.value(*x);
                let n = xv.len() as f64;
                let m = xv.sum() / n;
                let gv = g.item();
                let gx = xv.map(|v| gv * 2.0 * (v - m) / n);
                self.add_grad(*x, gx);
            }
            Op::MeanTokens(x) => {
                let shape = self.value(*x).shape().to_vec();
                let (b, t, d) = (shape[0], shape[1], shape[2]);
                let mut gx = vec![0.0; b * t * d];
                for bi in 0..b {
                    for ti in 0..t {
                        for k in 0..d {
                            gx[(bi * t + ti) * d + k] = g.data()[bi * d + k] / t as f64;
                        }
                    }
                }
                self.add_grad(*x, Tensor::new(shape, gx)?);
            }
            Op::Gather(x, index) => {
                let shape = self.value(*x).shape().to_vec();
                let mut gx = Tensor::zeros(&shape);
                let c = gx.cols();
                for (r, &idx) in index.iter().enumerate() {
                    let dst = &mut gx.data_mut()[idx * c..(idx + 1) * c];
                    for (d, s) in dst.iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                        *d += s;
                    }
                }
                self.add_grad(*x, gx);
            }
            Op::Scatter(x, index) => {
                let shape = self.value(*x).shape().to_vec();
                let c = g.cols();
                let mut gx = Vec::with_capacity(index.len() * c);
                for &idx in index {
                    gx.extend_from_slice(&g.data()[idx * c..(idx + 1) * c]);
                }
                self.add_grad(*x, Tensor::new(shape, gx)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.add_grad(*x, g.reshape(&shape)?);
            }
            Op::TokenLinear { x, w, b } => {
                let xshape = self.value(*x).shape().to_vec();
                let wshape = self.value(*w).shape().to_vec();
                let (batch, m, din) = (xshape[0], xshape[1], xshape[2]);
                let dout = wshape[2];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut gx = vec![0.0; batch * m * din];
                let mut gw = vec![0.0; m * din * dout];
                let mut gb = vec![0.0; m * dout];
                for bi in 0..batch {
                    for t in 0..m {
                        let grow = &g.data()[(bi * m + t) * dout..(bi * m + t + 1) * dout];
                        for (o, &gv) in grow.iter().enumerate() {
                            gb[t * dout + o] += gv;
                        }
                        for p in 0..din {
                            let xp = xv[(bi * m + t) * din + p];
                            let wrow = &wv[(t * din + p) * dout..(t * din + p + 1) * dout];
                            let gwrow = &mut gw[(t * din + p) * dout..(t * din + p + 1) * dout];
                            let mut acc = 0.0;
                            for ((gwq, &wq), &gv) in gwrow.iter_mut().zip(wrow).zip(grow) {
                                *gwq += xp * gv;
                                acc += wq * gv;
                            }
                            gx[(bi * m + t) * din + p] = acc;
                        }
                    }
                }
                let bshape = self.value(*b).shape().to_vec();
                self.add_grad(*x, Tensor::new(xshape, gx)?);
                self.add_grad(*w, Tensor::new(wshape, gw)?);
                self.add_grad(*b, Tensor::new(bshape, gb)?);
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    /// Adds the gradient of every bound, non-frozen parameter leaf into the
    /// store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                if store.is_frozen(*id) {
                    continue;
                }
                let p = store.get_mut(*id);
                match &mut p.grad {
                    Some(existing) => existing.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp()
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}
