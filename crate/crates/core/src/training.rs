//! Correction labels, the loss terms, and the training loop for the
//! correction network and its ablations.
//!
//! For a batch with labels `y`, frozen predictions `ŷ0` and groups `g`:
//!
//! ```text
//! b      = y / (ŷ0 + eps)                 (constant)
//! z      = T_λg(b)                        (depends on λ)
//! L_trans = mean (z - ẑ)²
//! L_abs   = mean huber(ŷ0 · T⁻¹_λg(ẑ) - y)
//! L_reg   = mean over unmasked groups of
//!           w_μ μ_g² + w_σ (σ_g² - 1)² + w_s |skew_g|   (moments of z)
//! total   = α L_trans + β L_abs + η L_reg
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{Batch, DadfModel, InputScaler, NetConfig, Trace};
use crate::data::{Bucketing, Impression};
use crate::error::{Error, Result};
use crate::eval::metrics::{mae, xauc};
use crate::first_stage::FirstStageOutput;
use crate::numeric::{Graph, Optimizer, OptimizerConfig, ParamStore, Tensor, Var};
use crate::transform::{self, GroupMoments, LAMBDA_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub huber_delta: f64,
    pub w_mu: f64,
    pub w_sigma: f64,
    pub w_s: f64,
    pub min_group: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.8,
            eta: 0.10,
            huber_delta: 1.0,
            w_mu: 1.0,
            w_sigma: 1.0,
            w_s: 0.5,
            min_group: transform::DEFAULT_MIN_GROUP,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.eta, self.huber_delta, self.w_mu, self.w_sigma, self.w_s];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.huber_delta == 0.0 {
            return Err(Error::Config("huber_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Multiplicative correction label `b = y / (ŷ0 + eps)`.
pub fn make_label(y: f64, y_hat0: f64, eps: f64) -> f64 {
    y / (y_hat0 + eps)
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

pub fn loss_trans(z: &[f64], z_hat: &[f64]) -> f64 {
    z.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64
}

pub fn loss_abs(y: &[f64], y_hat: &[f64], delta: f64) -> f64 {
    y.iter().zip(y_hat).map(|(a, b)| huber(b - a, delta)).sum::<f64>() / y.len() as f64
}

/// Moment penalty over the unmasked groups; zero when every group is masked.
pub fn loss_reg(moments: &[GroupMoments], w: &LossWeights) -> f64 {
    let active: Vec<&GroupMoments> = moments.iter().filter(|m| m.active).collect();
    if active.is_empty() {
        return 0.0;
    }
    active
        .iter()
        .map(|m| w.w_mu * m.mean * m.mean + w.w_sigma * (m.var - 1.0).powi(2) + w.w_s * m.skew.abs())
        .sum::<f64>()
        / active.len() as f64
}

fn huber_var(g: &mut Graph, r: Var, delta: f64) -> Result<Var> {
    let rv = g.value(r).clone();
    let value = rv.map(|v| huber(v, delta));
    let deriv = rv.map(|v| if v.abs() <= delta { v } else { delta * v.signum() });
    g.elementwise(value, vec![(r, deriv)])
}

/// Values of the loss terms for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_trans: f64,
    pub l_abs: f64,
    pub l_reg: f64,
    pub total: f64,
    /// `true` for groups excluded from `L_reg`.
    pub masked: Vec<bool>,
    /// Entries whose factor hit the overflow cap; the output guard keeps ẑ
    /// inside the inverse domain, so this is the only clamp left.
    pub domain_clamps: usize,
}

/// Graph nodes of the objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Var,
    pub l_trans: Var,
    pub l_abs: Var,
    pub l_reg: Var,
    pub target_z: Var,
    pub b_hat: Var,
    pub trace: Trace,
    pub masked: Vec<bool>,
    pub domain_clamps: usize,
}

impl Objective {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            l_trans: g.scalar(self.l_trans),
            l_abs: g.scalar(self.l_abs),
            l_reg: g.scalar(self.l_reg),
            total: g.scalar(self.total),
            masked: self.masked.clone(),
            domain_clamps: self.domain_clamps,
        }
    }
}

/// Builds the full objective for `batch` with labels `y`, reading parameter
/// values from `store` (which must share `model`'s layout).
pub fn objective(
    g: &mut Graph,
    model: &DadfModel,
    store: &ParamStore,
    batch: &Batch,
    y: &[f64],
    w: &LossWeights,
) -> Result<Objective> {
    if y.len() != batch.n {
        return Err(Error::Data(format!("{} labels for a batch of {}", y.len(), batch.n)));
    }
    if batch.n == 0 {
        return Err(Error::Data("empty training batch".into()));
    }
    let eps = model.config.eps;
    let tol = model.config.zero_branch_tol;
    let trace = model.forward_with(g, store, batch)?;
    let labels: Vec<f64> = y
        .iter()
        .zip(&batch.y_hat0)
        .map(|(&yi, &p)| make_label(yi, p, eps))
        .collect();
    let b = g.constant(Tensor::vector(labels));
    let target_z = transform::forward_var(g, b, trace.lambda, eps, tol)?;

    let diff = g.sub(target_z, trace.z_hat)?;
    let sq = g.square(diff);
    let l_trans = g.mean(sq);

    let (b_hat, domain_clamps) = transform::factor_from_log_var(g, trace.log_factor, eps)?;
    let base = g.constant(Tensor::vector(batch.y_hat0.clone()));
    let y_hat = g.mul(base, b_hat)?;
    let yv = g.constant(Tensor::vector(y.to_vec()));
    let resid = g.sub(y_hat, yv)?;
    let hub = huber_var(g, resid, w.huber_delta)?;
    let l_abs = g.mean(hub);

    let k = model.num_groups();
    let moments = transform::batch_moments_var(g, target_z, &batch.groups, k, w.min_group)?;
    let masked: Vec<bool> = moments.iter().map(Option::is_none).collect();
    let mut reg_terms = Vec::new();
    for m in moments.iter().flatten() {
        let mu2 = g.square(m.mean);
        let mu2 = g.scale(mu2, w.w_mu);
        let dv = g.add_scalar(m.var, -1.0);
        let dv2 = g.square(dv);
        let dv2 = g.scale(dv2, w.w_sigma);
        let sk = g.abs(m.skew);
        let sk = g.scale(sk, w.w_s);
        let t = g.add(mu2, dv2)?;
        reg_terms.push(g.add(t, sk)?);
    }
    let l_reg = if reg_terms.is_empty() {
        warn!("every duration group is below min_group = {}; L_reg is zero for this batch", w.min_group);
        g.constant(Tensor::scalar(0.0))
    } else {
        let mut acc = reg_terms[0];
        for &t in &reg_terms[1..] {
            acc = g.add(acc, t)?;
        }
        g.scale(acc, 1.0 / reg_terms.len() as f64)
    };

    let a = g.scale(l_trans, w.alpha);
    let bterm = g.scale(l_abs, w.beta);
    let e = g.scale(l_reg, w.eta);
    let ab = g.add(a, bterm)?;
    let total = g.add(ab, e)?;
    Ok(Objective {
        total,
        l_trans,
        l_abs,
        l_reg,
        target_z,
        b_hat,
        trace,
        masked,
        domain_clamps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Regress `b` directly: `λ` frozen at one (a pure shift) and no `L_reg`.
    NoDist,
    /// One group, one expert, one `λ`.
    NoFactor,
    /// `h_a` replaced by zeros.
    NoAux,
    /// Single global log-transform correction without auxiliary inputs or
    /// `L_reg`; an approximation of a global multiplicative-calibration
    /// baseline.
    GlobalCorrection,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoDist,
        Variant::NoFactor,
        Variant::NoAux,
        Variant::GlobalCorrection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDist => "no_dist",
            Variant::NoFactor => "no_factor",
            Variant::NoAux => "no_aux",
            Variant::GlobalCorrection => "global_correction",
        }
    }

    fn single_group(self) -> bool {
        matches!(self, Variant::NoFactor | Variant::GlobalCorrection)
    }

    fn frozen_lambda(self) -> Option<f64> {
        match self {
            Variant::NoDist => Some(1.0),
            Variant::GlobalCorrection => Some(0.0),
            _ => None,
        }
    }

    fn use_aux(self) -> bool {
        !matches!(self, Variant::NoAux | Variant::GlobalCorrection)
    }

    fn use_reg(self) -> bool {
        !matches!(self, Variant::NoDist | Variant::GlobalCorrection)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}`; expected one of full, no_dist, no_factor, no_aux, global_correction"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub net: NetConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Pair cap for the per-epoch validation XAUC.
    pub val_max_pairs: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            net: NetConfig::default(),
            optimizer: OptimizerConfig::adam(1e-3),
            batch_size: 1024,
            max_epochs: 40,
            patience: 5,
            seed: 0,
            lambda_min: LAMBDA_RANGE.0,
            lambda_max: LAMBDA_RANGE.1,
            val_max_pairs: 1_000_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.net.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.lambda_min < self.lambda_max) {
            return Err(Error::Config("lambda_min must be below lambda_max".into()));
        }
        Ok(())
    }
}

/// Impressions with their frozen first-stage signals.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Impression],
    pub train_out: &'a [FirstStageOutput],
    pub val: &'a [Impression],
    pub val_out: &'a [FirstStageOutput],
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_trans: f64,
    pub l_abs: f64,
    pub l_reg: f64,
    pub total: f64,
    pub val_mae: f64,
    pub val_xauc: f64,
    pub lambdas: Vec<f64>,
    /// Moments of the validation targets `z` under the current `λ`.
    pub moments: Vec<GroupMoments>,
    pub domain_clamps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub variant: Variant,
    pub model: DadfModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

impl TrainOutcome {
    pub fn domain_clamps(&self) -> usize {
        self.history.iter().map(|h| h.domain_clamps).sum()
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for h in &self.history {
            serde_json::to_writer(&mut f, h)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn check_pairs(data: &[Impression], outs: &[FirstStageOutput], what: &str) -> Result<()> {
    if data.len() != outs.len() {
        return Err(Error::Data(format!(
            "{what}: {} impressions but {} first-stage outputs",
            data.len(),
            outs.len()
        )));
    }
    Ok(())
}

/// Trains the full model.
pub fn train_dadf(data: &TrainData<'_>, bucketing: &Bucketing, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_variant(Variant::Full, data, bucketing, cfg)
}

/// Trains one variant with early stopping on validation MAE and returns the
/// best checkpoint.
pub fn train_variant(
    variant: Variant,
    data: &TrainData<'_>,
    bucketing: &Bucketing,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pairs(data.train, data.train_out, "train")?;
    check_pairs(data.val, data.val_out, "val")?;
    if data.train.is_empty() {
        return Err(Error::Data("DADF training set is empty".into()));
    }
    let (val, val_out) = if data.val.is_empty() {
        (data.train, data.train_out)
    } else {
        (data.val, data.val_out)
    };

    let bucketing = if variant.single_group() {
        Bucketing::single()
    } else {
        bucketing.clone()
    };
    let mut net = cfg.net.clone();
    if let Some(l) = variant.frozen_lambda() {
        net.init_lambda = l;
    }
    let mut weights = cfg.weights;
    if !variant.use_reg() {
        weights.eta = 0.0;
    }
    let scaler = InputScaler::fit(data.train, data.train_out)?;
    let mut model = DadfModel::new(net, bucketing, scaler, variant.use_aux(), cfg.seed)?;
    if variant.frozen_lambda().is_some() {
        model.store.set_frozen(model.lambda, true);
    }

    let train_rows: Vec<&Impression> = data.train.iter().collect();
    let train_outs: Vec<&FirstStageOutput> = data.train_out.iter().collect();
    let train_batch = model.batch(&train_rows, &train_outs)?;
    let train_y: Vec<f64> = data.train.iter().map(|r| r.watch_time_s).collect();
    let val_rows: Vec<&Impression> = val.iter().collect();
    let val_outs: Vec<&FirstStageOutput> = val_out.iter().collect();
    let val_batch = model.batch(&val_rows, &val_outs)?;
    let val_y: Vec<f64> = val.iter().map(|r| r.watch_time_s).collect();
    let val_b: Vec<f64> = val_y
        .iter()
        .zip(&val_batch.y_hat0)
        .map(|(&y, &p)| make_label(y, p, model.config.eps))
        .collect();

    let mut opt = Optimizer::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..train_batch.n).collect();
    let mut history: Vec<EpochLog> = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.store.clone());
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        let mut clamps = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_batch.select(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let mut g = Graph::new();
            let obj = objective(&mut g, &model, &model.store, &batch, &y, &weights)?;
            let lb = obj.breakdown(&g);
            for (name, v) in [
                ("L_trans", lb.l_trans),
                ("L_abs", lb.l_abs),
                ("L_reg", lb.l_reg),
                ("total", lb.total),
            ] {
                if !v.is_finite() {
                    return Err(Error::Divergence(format!(
                        "{variant}: {name} = {v} at epoch {epoch}, batch {bi}"
                    )));
                }
            }
            g.backward(obj.total)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            opt.step(&mut model.store).map_err(|e| match e {
                Error::NonFiniteGradient(p) => Error::Divergence(format!(
                    "{variant}: non-finite gradient in `{p}` at epoch {epoch}, batch {bi}"
                )),
                other => other,
            })?;
            if let Some(id) = model.store.ids().find(|&id| !model.store.get(id).value.all_finite()) {
                return Err(Error::Divergence(format!(
                    "{variant}: parameter `{}` became non-finite at epoch {epoch}, batch {bi}",
                    model.store.name(id)
                )));
            }
            if !model.store.is_frozen(model.lambda) {
                for l in model.store.value_mut(model.lambda).data_mut() {
                    *l = l.clamp(cfg.lambda_min, cfg.lambda_max);
                }
            }
            let w = chunk.len() as f64;
            sums[0] += lb.l_trans * w;
            sums[1] += lb.l_abs * w;
            sums[2] += lb.l_reg * w;
            sums[3] += lb.total * w;
            seen += chunk.len();
            clamps += lb.domain_clamps;
        }

        let preds = model.predict_batch(&val_batch)?;
        let y_hat: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
        let val_mae = mae(&val_y, &y_hat)?;
        let val_xauc = xauc(&val_y, &y_hat, Some(cfg.val_max_pairs), cfg.seed).map_or(f64::NAN, |x| x.value);
        let params = model.transform_params();
        let z: Vec<f64> = val_b
            .iter()
            .zip(&val_batch.groups)
            .map(|(&b, &gi)| params.forward(b, gi))
            .collect::<Result<_>>()?;
        let n = seen as f64;
        let log = EpochLog {
            epoch,
            l_trans: sums[0] / n,
            l_abs: sums[1] / n,
            l_reg: sums[2] / n,
            total: sums[3] / n,
            val_mae,
            val_xauc,
            lambdas: model.lambdas(),
            moments: transform::batch_moments(&z, &val_batch.groups, model.num_groups(), weights.min_group),
            domain_clamps: clamps,
        };
        info!(
            "{variant} epoch {epoch}: total {:.4} (trans {:.4}, abs {:.4}, reg {:.4}) val MAE {val_mae:.4} XAUC {val_xauc:.4}",
            log.total, log.l_trans, log.l_abs, log.l_reg
        );
        history.push(log);
        if val_mae < best.0 {
            best = (val_mae, epoch, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.store = best.2;
    model.store.zero_grad();
    Ok(TrainOutcome {
        variant,
        model,
        history,
        best_epoch: best.1,
        best_val_mae: best.0,
    })
}
