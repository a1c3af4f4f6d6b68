//! The second-stage correction network.
//!
//! Per impression the network sees the features `x`, the frozen raw output
//! `ℓ0`, the duration group `g` and an auxiliary summary `h_a` built from
//! the first stage's auxiliary signals:
//!
//! * `h_c = MLP([ℓ_play, x_c])`
//! * `h_ℓ`: per-task projections `Φ_m(ℓ_m)` followed by self-attention over
//!   the `M` task tokens, mean-pooled
//! * `h_r`: self-attention over the tower representations `r_m`, mean-pooled
//! * `h_a = MLP([h_c, h_ℓ, h_r])`
//!
//! The fused vector `h = MLP([x, ℓ0, embed(g), h_a])` is routed to exactly one
//! expert `E_g`, whose output `ẑ` lives in the group's transformed space. The
//! factor is `b̂ = T⁻¹(ẑ)`, clamped at inference, and `ŷ = ŷ0 · b̂`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bucketing, Impression, NUM_AUX};
use crate::error::{Error, Result};
use crate::first_stage::FirstStageOutput;
use crate::numeric::nn::{glorot, Activation, Mlp};
use crate::numeric::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::stats::Standardizer;
use crate::transform::{self, TransformParams};

pub const MODEL_VERSION: u32 = 1;
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub fusion_hidden: Vec<usize>,
    pub expert_hidden: Vec<usize>,
    pub group_embed_dim: usize,
    /// Width of each `Φ_m` projection.
    pub proj_dim: usize,
    /// Model width of both attention blocks.
    pub attn_dim: usize,
    pub hc_dim: usize,
    pub ha_dim: usize,
    /// Initial weight scale of each expert's last layer.
    pub expert_output_gain: f64,
    pub init_lambda: f64,
    pub eps: f64,
    pub zero_branch_tol: f64,
    /// Width of the smooth guard that keeps `1 + λẑ` positive.
    pub domain_softness: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            fusion_hidden: vec![128, 64],
            expert_hidden: vec![64, 32],
            group_embed_dim: 8,
            proj_dim: 8,
            attn_dim: 16,
            hc_dim: 16,
            ha_dim: 16,
            expert_output_gain: 0.1,
            init_lambda: 1.0,
            eps: transform::DEFAULT_EPS,
            zero_branch_tol: transform::DEFAULT_ZERO_BRANCH_TOL,
            domain_softness: transform::DEFAULT_DOMAIN_SOFTNESS,
            b_min: 0.1,
            b_max: 10.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("correction net: {m}")));
        if self.fusion_hidden.is_empty() || self.fusion_hidden.contains(&0) || self.expert_hidden.contains(&0) {
            return bad("layer widths must be positive and fusion needs at least one layer");
        }
        if [self.group_embed_dim, self.proj_dim, self.attn_dim, self.hc_dim, self.ha_dim].contains(&0) {
            return bad("embedding and branch widths must be positive");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.b_min > 0.0 && self.b_min < self.b_max && self.b_max.is_finite()) {
            return bad("clamp bounds need 0 < b_min < b_max < inf");
        }
        if !self.init_lambda.is_finite() {
            return bad("init_lambda must be finite");
        }
        if !(self.domain_softness > 0.0 && self.domain_softness < 1.0) {
            return bad("domain_softness must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Scalers for every network input, fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub x: Standardizer,
    pub l0: Standardizer,
    pub play_common: Standardizer,
    pub aux: Standardizer,
    pub reps: Standardizer,
}

impl InputScaler {
    pub fn fit(data: &[Impression], outputs: &[FirstStageOutput]) -> Result<Self> {
        let raw = RawInputs::collect(&data.iter().collect::<Vec<_>>(), &outputs.iter().collect::<Vec<_>>())?;
        Ok(Self {
            x: Standardizer::fit(&raw.x, raw.feature_dim),
            l0: Standardizer::fit(&raw.l0, 1),
            play_common: Standardizer::fit(&raw.play_common, raw.common_dim + 1),
            aux: Standardizer::fit(&raw.aux, NUM_AUX),
            reps: Standardizer::fit(&raw.reps, NUM_AUX * raw.rep_dim),
        })
    }
}

struct RawInputs {
    n: usize,
    feature_dim: usize,
    common_dim: usize,
    rep_dim: usize,
    x: Vec<f64>,
    l0: Vec<f64>,
    play_common: Vec<f64>,
    aux: Vec<f64>,
    reps: Vec<f64>,
}

impl RawInputs {
    fn collect(rows: &[&Impression], outs: &[&FirstStageOutput]) -> Result<Self> {
        if rows.len() != outs.len() {
            return Err(Error::Data(format!(
                "{} impressions but {} first-stage outputs",
                rows.len(),
                outs.len()
            )));
        }
        let n = rows.len();
        let feature_dim = rows.first().map_or(0, |r| r.features.len());
        let common_dim = outs.first().map_or(0, |o| o.common_rep.len());
        let rep_dim = outs.first().map_or(0, |o| o.rep_dim());
        let mut raw = Self {
            n,
            feature_dim,
            common_dim,
            rep_dim,
            x: Vec::with_capacity(n * feature_dim),
            l0: Vec::with_capacity(n),
            play_common: Vec::with_capacity(n * (common_dim + 1)),
            aux: Vec::with_capacity(n * NUM_AUX),
            reps: Vec::with_capacity(n * NUM_AUX * rep_dim),
        };
        for (r, o) in rows.iter().zip(outs) {
            if r.features.len() != feature_dim
                || o.common_rep.len() != common_dim
                || o.tower_reps.len() != NUM_AUX
                || o.tower_reps.iter().any(|t| t.len() != rep_dim)
            {
                return Err(Error::Data("inconsistent input widths in correction batch".into()));
            }
            if !o.is_finite() {
                return Err(Error::Data("first-stage output contains non-finite values".into()));
            }
            raw.x.extend_from_slice(&r.features);
            raw.l0.push(o.l0);
            raw.play_common.push(o.play_logit);
            raw.play_common.extend_from_slice(&o.common_rep);
            raw.aux.extend_from_slice(&o.aux_logits);
            for t in &o.tower_reps {
                raw.reps.extend_from_slice(t);
            }
        }
        Ok(raw)
    }
}

/// Scaled network inputs for a set of impressions. Labels are not part of
/// a batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub x: Tensor,
    pub l0: Tensor,
    pub groups: Vec<usize>,
    pub play_common: Tensor,
    pub aux: Tensor,
    pub reps: Tensor,
    pub y_hat0: Vec<f64>,
}

impl Batch {
    /// Rows `idx` of this batch, in that order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
            let c = t.cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Tensor::new(shape, data).expect("row selection keeps the shape")
        }
        Batch {
            n: idx.len(),
            x: rows(&self.x, idx),
            l0: rows(&self.l0, idx),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            play_common: rows(&self.play_common, idx),
            aux: rows(&self.aux, idx),
            reps: rows(&self.reps, idx),
            y_hat0: idx.iter().map(|&i| self.y_hat0[i]).collect(),
        }
    }
}

/// Single-head scaled dot-product self-attention over a token axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub in_dim: usize,
    pub dim: usize,
}

impl Attention {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, in_dim: usize, dim: usize) -> Self {
        let mut w = |suffix: &str| store.add(format!("{name}.{suffix}"), glorot(rng, in_dim, dim, 1.0));
        Self {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            in_dim,
            dim,
        }
    }

    /// `tokens: [B, T, in_dim]` to `([B, T, dim], attention [B, T, T])`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<(Var, Var)> {
        let shape = g.value(tokens).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.in_dim {
            return Err(Error::shape("attention", &shape, &[0, 0, self.in_dim]));
        }
        let (b, t) = (shape[0], shape[1]);
        let flat = g.reshape(tokens, &[b * t, self.in_dim])?;
        let project = |g: &mut Graph, w: ParamId| -> Result<Var> {
            let wv = g.param(store, w);
            let p = g.matmul(flat, wv)?;
            g.reshape(p, &[b, t, self.dim])
        };
        let q = project(g, self.wq)?;
        let k = project(g, self.wk)?;
        let v = project(g, self.wv)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let weights = g.softmax(scores);
        let out = g.bmm(weights, v, false)?;
        Ok((out, weights))
    }

    fn params(&self) -> [ParamId; 3] {
        [self.wq, self.wk, self.wv]
    }
}

/// Parameters of the three-branch auxiliary module.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiLabel {
    pub hc: Mlp,
    pub phi_w1: ParamId,
    pub phi_b1: ParamId,
    pub phi_w2: ParamId,
    pub phi_b2: ParamId,
    pub logit_attn: Attention,
    pub rep_mixer: Attention,
    pub ha: Mlp,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Trace {
    pub x: Var,
    pub l0: Var,
    pub group_emb: Var,
    pub h_a: Var,
    pub h: Var,
    /// `[B]` transformed-space output, always inside the inverse domain.
    pub z_hat: Var,
    /// `[B]` `ln(b̂ + eps)`, the inverse of `z_hat` in log form.
    pub log_factor: Var,
    /// `[B]` per-sample `λ_g`.
    pub lambda: Var,
    pub logit_attention: Option<Var>,
    pub rep_attention: Option<Var>,
}

/// One corrected prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub group: usize,
    pub z_hat: f64,
    pub b_hat: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DadfModel {
    pub version: u32,
    pub config: NetConfig,
    pub bucketing: Bucketing,
    pub scaler: InputScaler,
    pub feature_dim: usize,
    pub common_dim: usize,
    pub rep_dim: usize,
    pub use_aux: bool,
    pub store: ParamStore,
    pub lambda: ParamId,
    pub group_emb: ParamId,
    pub fusion: Mlp,
    pub experts: Vec<Mlp>,
    pub multilabel: Option<MultiLabel>,
}

impl DadfModel {
    /// Builds a freshly initialised model. `use_aux = false` drops the
    /// auxiliary module and feeds zeros in place of `h_a`.
    pub fn new(
        config: NetConfig,
        bucketing: Bucketing,
        scaler: InputScaler,
        use_aux: bool,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let k = bucketing.num_groups();
        let feature_dim = scaler.x.dim();
        let common_dim = scaler.play_common.dim().saturating_sub(1);
        let rep_dim = scaler.reps.dim() / NUM_AUX;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lambda = store.add("dadf.lambda", Tensor::full(&[k], config.init_lambda));
        let emb = (0..k * config.group_embed_dim)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let group_emb = store.add("dadf.group_emb", Tensor::new(vec![k, config.group_embed_dim], emb)?);

        let multilabel = if use_aux {
            let hc = Mlp::new(
                &mut store,
                &mut rng,
                "dadf.hc",
                &[common_dim + 1, config.hc_dim],
                Activation::Tanh,
                Activation::Tanh,
            );
            let p = config.proj_dim;
            let mut uniform = |shape: &[usize], fan_in: usize, fan_out: usize| {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect())
            };
            let phi_w1 = store.add("dadf.phi.w1", uniform(&[NUM_AUX, 1, p], 1, p)?);
            let phi_b1 = store.add("dadf.phi.b1", Tensor::zeros(&[NUM_AUX, p]));
            let phi_w2 = store.add("dadf.phi.w2", uniform(&[NUM_AUX, p, p], p, p)?);
            let phi_b2 = store.add("dadf.phi.b2", Tensor::zeros(&[NUM_AUX, p]));
            let logit_attn = Attention::new(&mut store, &mut rng, "dadf.logit_attn", p, config.attn_dim);
            let rep_mixer = Attention::new(&mut store, &mut rng, "dadf.rep_mixer", rep_dim, config.attn_dim);
            let ha = Mlp::new(
                &mut store,
                &mut rng,
                "dadf.ha",
                &[config.hc_dim + 2 * config.attn_dim, config.ha_dim],
                Activation::Tanh,
                Activation::Tanh,
            );
            Some(MultiLabel {
                hc,
                phi_w1,
                phi_b1,
                phi_w2,
                phi_b2,
                logit_attn,
                rep_mixer,
                ha,
            })
        } else {
            None
        };

        let mut sizes = vec![feature_dim + 1 + config.group_embed_dim + config.ha_dim];
        sizes.extend(&config.fusion_hidden);
        let fusion = Mlp::new(&mut store, &mut rng, "dadf.fusion", &sizes, Activation::Tanh, Activation::Tanh);
        let h_dim = *config.fusion_hidden.last().expect("validated");
        let mut expert_sizes = vec![h_dim];
        expert_sizes.extend(&config.expert_hidden);
        expert_sizes.push(1);
        let experts = (0..k)
            .map(|gi| {
                Mlp::with_output_gain(
                    &mut store,
                    &mut rng,
                    &format!("dadf.expert{gi}"),
                    &expert_sizes,
                    Activation::Tanh,
                    Activation::Identity,
                    config.expert_output_gain,
                )
            })
            .collect();
        Ok(Self {
            version: MODEL_VERSION,
            config,
            bucketing,
            scaler,
            feature_dim,
            common_dim,
            rep_dim,
            use_aux,
            store,
            lambda,
            group_emb,
            fusion,
            experts,
            multilabel,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.experts.len()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.store.value(self.lambda).data().to_vec()
    }

    pub fn transform_params(&self) -> TransformParams {
        TransformParams {
            lambdas: self.lambdas(),
            eps: self.config.eps,
            zero_branch_tol: self.config.zero_branch_tol,
        }
    }

    /// Parameters owned by expert `g`.
    pub fn expert_params(&self, g: usize) -> Vec<ParamId> {
        self.experts[g].params()
    }

    /// Parameters of the auxiliary module, empty without it.
    pub fn multilabel_params(&self) -> Vec<ParamId> {
        match &self.multilabel {
            None => Vec::new(),
            Some(ml) => {
                let mut ids = ml.hc.params();
                ids.extend([ml.phi_w1, ml.phi_b1, ml.phi_w2, ml.phi_b2]);
                ids.extend(ml.logit_attn.params());
                ids.extend(ml.rep_mixer.params());
                ids.extend(ml.ha.params());
                ids
            }
        }
    }

    /// Scales inputs and assigns duration groups. Never reads watch time.
    pub fn batch(&self, rows: &[&Impression], outs: &[&FirstStageOutput]) -> Result<Batch> {
        let mut raw = RawInputs::collect(rows, outs)?;
        if raw.n > 0
            && (raw.feature_dim != self.feature_dim || raw.common_dim != self.common_dim || raw.rep_dim != self.rep_dim)
        {
            return Err(Error::Data(format!(
                "model expects widths (features {}, common {}, reps {}), got ({}, {}, {})",
                self.feature_dim, self.common_dim, self.rep_dim, raw.feature_dim, raw.common_dim, raw.rep_dim
            )));
        }
        let n = raw.n;
        self.scaler.x.apply(&mut raw.x);
        self.scaler.l0.apply(&mut raw.l0);
        self.scaler.play_common.apply(&mut raw.play_common);
        self.scaler.aux.apply(&mut raw.aux);
        self.scaler.reps.apply(&mut raw.reps);
        Ok(Batch {
            n,
            x: Tensor::new(vec![n, self.feature_dim], raw.x)?,
            l0: Tensor::new(vec![n, 1], raw.l0)?,
            groups: rows.iter().map(|r| self.bucketing.group(r.duration_s)).collect(),
            play_common: Tensor::new(vec![n, self.common_dim + 1], raw.play_common)?,
            aux: Tensor::new(vec![n, NUM_AUX, 1], raw.aux)?,
            reps: Tensor::new(vec![n, NUM_AUX, self.rep_dim], raw.reps)?,
            y_hat0: outs.iter().map(|o| o.y_hat0).collect(),
        })
    }

    /// Auxiliary summary `h_a` and the two attention matrices.
    pub fn multilabel_forward(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Option<(Var, Var)>)> {
        self.multilabel_forward_with(g, &self.store, batch)
    }

    /// [`DadfModel::multilabel_forward`] with parameter values taken from
    /// `s`, which must share this model's layout.
    pub fn multilabel_forward_with(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        batch: &Batch,
    ) -> Result<(Var, Option<(Var, Var)>)> {
        let Some(ml) = &self.multilabel else {
            return Ok((g.constant(Tensor::zeros(&[batch.n, self.config.ha_dim])), None));
        };
        let pc = g.constant(batch.play_common.clone());
        let h_c = ml.hc.forward(g, s, pc)?;

        let aux = g.constant(batch.aux.clone());
        let (w1, b1, w2, b2) = (
            g.param(s, ml.phi_w1),
            g.param(s, ml.phi_b1),
            g.param(s, ml.phi_w2),
            g.param(s, ml.phi_b2),
        );
        let p1 = g.token_linear(aux, w1, b1)?;
        let p1 = g.tanh(p1);
        let p2 = g.token_linear(p1, w2, b2)?;
        let projected = g.tanh(p2);
        let (lt, logit_w) = ml.logit_attn.forward(g, s, projected)?;
        let h_l = g.mean_tokens(lt)?;

        let reps = g.constant(batch.reps.clone());
        let (rt, rep_w) = ml.rep_mixer.forward(g, s, reps)?;
        let h_r = g.mean_tokens(rt)?;

        let cat = g.concat(&[h_c, h_l, h_r])?;
        let h_a = ml.ha.forward(g, s, cat)?;
        Ok((h_a, Some((logit_w, rep_w))))
    }

    /// Full differentiable forward pass.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Trace> {
        self.forward_with(g, &self.store, batch)
    }

    /// [`DadfModel::forward`] with parameter values taken from `s`.
    pub fn forward_with(&self, g: &mut Graph, s: &ParamStore, batch: &Batch) -> Result<Trace> {
        let k = self.num_groups();
        if let Some(&bad) = batch.groups.iter().find(|&&gi| gi >= k) {
            return Err(Error::GroupOutOfRange { group: bad, groups: k });
        }
        let (h_a, attn) = self.multilabel_forward_with(g, s, batch)?;
        let x = g.variable(batch.x.clone());
        let l0 = g.variable(batch.l0.clone());
        let table = g.param(s, self.group_emb);
        let group_emb = g.gather(table, &batch.groups)?;
        let fused_in = g.concat(&[x, l0, group_emb, h_a])?;
        let h = self.fusion.forward(g, s, fused_in)?;

        let mut z: Option<Var> = None;
        for (gi, expert) in self.experts.iter().enumerate() {
            let idx: Vec<usize> = (0..batch.n).filter(|&i| batch.groups[i] == gi).collect();
            if idx.is_empty() {
                continue;
            }
            let hg = g.gather(h, &idx)?;
            let zg = expert.forward(g, s, hg)?;
            let placed = g.scatter(zg, &idx, batch.n)?;
            z = Some(match z {
                None => placed,
                Some(acc) => g.add(acc, placed)?,
            });
        }
        let z = match z {
            Some(z) => z,
            None => g.constant(Tensor::zeros(&[0, 1])),
        };
        let raw = g.reshape(z, &[batch.n])?;
        let lambda_all = g.param(s, self.lambda);
        let lambda = g.gather(lambda_all, &batch.groups)?;
        let (z_hat, log_factor) = transform::guarded_output_var(
            g,
            raw,
            lambda,
            self.config.domain_softness,
            self.config.zero_branch_tol,
        )?;
        Ok(Trace {
            x,
            l0,
            group_emb,
            h_a,
            h,
            z_hat,
            log_factor,
            lambda,
            logit_attention: attn.map(|a| a.0),
            rep_attention: attn.map(|a| a.1),
        })
    }

    /// Serving path: `ẑ`, clamped `b̂` and `ŷ = ŷ0 · b̂` for every impression.
    pub fn predict(&self, data: &[Impression], outputs: &[FirstStageOutput]) -> Result<Vec<Prediction>> {
        if data.len() != outputs.len() {
            return Err(Error::Data(format!(
                "{} impressions but {} first-stage outputs",
                data.len(),
                outputs.len()
            )));
        }
        let mut out = Vec::with_capacity(data.len());
        for (rows, outs) in data.chunks(PREDICT_CHUNK).zip(outputs.chunks(PREDICT_CHUNK)) {
            let rows: Vec<&Impression> = rows.iter().collect();
            let outs: Vec<&FirstStageOutput> = outs.iter().collect();
            let batch = self.batch(&rows, &outs)?;
            out.extend(self.predict_batch_with(&self.store, &batch)?);
        }
        Ok(out)
    }

    /// Serving path over an already scaled batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(batch.n);
        let mut start = 0;
        while start < batch.n {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(batch.n)).collect();
            out.extend(self.predict_batch_with(&self.store, &batch.select(&idx))?);
            start += PREDICT_CHUNK;
        }
        Ok(out)
    }

    fn predict_batch_with(&self, s: &ParamStore, batch: &Batch) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let trace = self.forward_with(&mut g, s, batch)?;
        let q = g.value(trace.log_factor).data();
        let mut out = Vec::with_capacity(batch.n);
        for (i, &z_hat) in g.value(trace.z_hat).data().iter().enumerate() {
            let group = batch.groups[i];
            let b = (q[i].min(transform::MAX_LOG_FACTOR).exp() - self.config.eps).max(0.0);
            let b_hat = b.clamp(self.config.b_min, self.config.b_max);
            out.push(Prediction {
                group,
                z_hat,
                b_hat,
                y_hat: batch.y_hat0[i] * b_hat,
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let model: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if model.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "model file version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// `ẑ` that maps to `b̂ = 1` in group `g`.
pub fn identity_z(model: &DadfModel, g: usize) -> Result<f64> {
    model.transform_params().forward(1.0, g)
}
