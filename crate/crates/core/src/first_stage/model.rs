//! Shared-bottom multi-task first stage with VR and WLR watch-time heads.

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::output::{FirstStage, FirstStageOutput, OutputMapping};
use crate::data::{Impression, NUM_AUX};
use crate::error::{Error, Result};
use crate::numeric::graph::softplus_inv;
use crate::numeric::nn::{Activation, Linear, Mlp};
use crate::numeric::{Graph, Optimizer, OptimizerConfig, ParamId, ParamStore, Tensor, Var};
use crate::stats::Standardizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Value regression: MSE on watch time through a softplus head.
    Vr,
    /// Weighted logistic regression with watch-time weighted positives.
    Wlr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstStageHyper {
    pub embed_dim: usize,
    pub user_buckets: usize,
    pub item_buckets: usize,
    pub hidden: Vec<usize>,
    pub tower_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// WLR positives are impressions with `y > positive_threshold`.
    pub positive_threshold: f64,
    pub aux_weight: f64,
    pub play_weight: f64,
}

impl Default for FirstStageHyper {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            user_buckets: 4096,
            item_buckets: 4096,
            hidden: vec![256, 128, 64],
            tower_dim: 16,
            epochs: 8,
            batch_size: 512,
            optimizer: OptimizerConfig::adam(1e-3),
            patience: 2,
            seed: 0,
            positive_threshold: 0.0,
            aux_weight: 1.0,
            play_weight: 1.0,
        }
    }
}

impl FirstStageHyper {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.user_buckets == 0 || self.item_buckets == 0 || self.tower_dim == 0 {
            return Err(Error::Config("first stage: embedding and tower sizes must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("first stage: hidden sizes must be non-empty and positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("first stage: batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirstStageModel {
    pub backbone: Backbone,
    pub hyper: FirstStageHyper,
    pub mapping: OutputMapping,
    pub feature_dim: usize,
    /// Scaling of `[features, ln d]`.
    pub scaler: Standardizer,
    pub history: Vec<FirstStageEpoch>,
    frozen: bool,
    store: ParamStore,
    user_emb: ParamId,
    item_emb: ParamId,
    trunk: Mlp,
    watch_head: Linear,
    play_head: Linear,
    towers: Vec<Mlp>,
    aux_heads: Vec<Linear>,
}

struct Forward {
    l0: Var,
    play: Var,
    aux: Vec<Var>,
    reps: Vec<Var>,
    common: Var,
}

fn dense_inputs(rows: &[&Impression], feature_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * (feature_dim + 1));
    for r in rows {
        out.extend_from_slice(&r.features);
        out.push(r.duration_s.ln());
    }
    out
}

impl FirstStageModel {
    fn build(backbone: Backbone, hyper: FirstStageHyper, feature_dim: usize, scaler: Standardizer) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut store = ParamStore::new();
        let e = hyper.embed_dim;
        let mut table = |store: &mut ParamStore, name: &str, rows: usize| {
            let data = (0..rows * e).map(|_| rng.random_range(-0.05..0.05)).collect();
            store.add(name, Tensor::new(vec![rows, e], data).expect("table shape"))
        };
        let user_emb = table(&mut store, "first_stage.user_emb", hyper.user_buckets);
        let item_emb = table(&mut store, "first_stage.item_emb", hyper.item_buckets);
        let mut sizes = vec![2 * e + feature_dim + 1];
        sizes.extend(&hyper.hidden);
        let trunk = Mlp::new(&mut store, &mut rng, "first_stage.trunk", &sizes, Activation::Relu, Activation::Relu);
        let top = *hyper.hidden.last().expect("validated hidden sizes");
        let watch_head = Linear::new(&mut store, &mut rng, "first_stage.watch", top, 1, 0.1);
        let play_head = Linear::new(&mut store, &mut rng, "first_stage.play", top, 1, 0.1);
        let mut towers = Vec::with_capacity(NUM_AUX);
        let mut aux_heads = Vec::with_capacity(NUM_AUX);
        for m in 0..NUM_AUX {
            towers.push(Mlp::new(
                &mut store,
                &mut rng,
                &format!("first_stage.tower{m}"),
                &[top, hyper.tower_dim],
                Activation::Relu,
                Activation::Relu,
            ));
            aux_heads.push(Linear::new(&mut store, &mut rng, &format!("first_stage.aux{m}"), hyper.tower_dim, 1, 0.1));
        }
        let mapping = match backbone {
            Backbone::Vr => OutputMapping::Softplus,
            Backbone::Wlr => OutputMapping::ScaledExp { scale: 1.0 },
        };
        Self {
            backbone,
            hyper,
            mapping,
            feature_dim,
            scaler,
            history: Vec::new(),
            frozen: false,
            store,
            user_emb,
            item_emb,
            trunk,
            watch_head,
            play_head,
            towers,
            aux_heads,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Marks the model frozen; no further training is possible.
    pub fn freeze(&mut self) {
        self.store.freeze_all();
        self.frozen = true;
    }

    fn forward(&self, g: &mut Graph, rows: &[&Impression]) -> Result<Forward> {
        let mut dense = dense_inputs(rows, self.feature_dim);
        self.scaler.apply(&mut dense);
        let x = g.constant(Tensor::new(vec![rows.len(), self.feature_dim + 1], dense)?);
        let users: Vec<usize> = rows
            .iter()
            .map(|r| (r.user_id % self.hyper.user_buckets as u64) as usize)
            .collect();
        let items: Vec<usize> = rows
            .iter()
            .map(|r| (r.item_id % self.hyper.item_buckets as u64) as usize)
            .collect();
        let ut = g.param(&self.store, self.user_emb);
        let it = g.param(&self.store, self.item_emb);
        let ue = g.gather(ut, &users)?;
        let ie = g.gather(it, &items)?;
        let input = g.concat(&[ue, ie, x])?;
        let common = self.trunk.forward(g, &self.store, input)?;
        let l0 = self.watch_head.forward(g, &self.store, common)?;
        let play = self.play_head.forward(g, &self.store, common)?;
        let mut aux = Vec::with_capacity(NUM_AUX);
        let mut reps = Vec::with_capacity(NUM_AUX);
        for (tower, head) in self.towers.iter().zip(&self.aux_heads) {
            let r = tower.forward(g, &self.store, common)?;
            aux.push(head.forward(g, &self.store, r)?);
            reps.push(r);
        }
        Ok(Forward {
            l0,
            play,
            aux,
            reps,
            common,
        })
    }

    fn loss(&self, g: &mut Graph, rows: &[&Impression], y_var: f64) -> Result<Var> {
        let f = self.forward(g, rows)?;
        let n = rows.len();
        let y: Vec<f64> = rows.iter().map(|r| r.watch_time_s).collect();
        let watch = match self.backbone {
            Backbone::Vr => {
                let pred = g.softplus(f.l0);
                let target = g.constant(Tensor::new(vec![n, 1], y.clone())?);
                let r = g.sub(pred, target)?;
                let sq = g.square(r);
                let m = g.mean(sq);
                g.scale(m, 1.0 / y_var)
            }
            Backbone::Wlr => {
                let thr = self.hyper.positive_threshold;
                let labels: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v > thr))).collect();
                let weights: Vec<f64> = y.iter().map(|&v| if v > thr { v } else { 1.0 }).collect();
                let total: f64 = weights.iter().sum();
                let bce = bce_with_logits(g, f.l0, &labels)?;
                let w = g.constant(Tensor::new(vec![n, 1], weights)?);
                let weighted = g.mul(bce, w)?;
                let s = g.sum(weighted);
                g.scale(s, 1.0 / total)
            }
        };
        let log_y: Vec<f64> = y.iter().map(|v| v.ln_1p()).collect();
        let target = g.constant(Tensor::new(vec![n, 1], log_y)?);
        let r = g.sub(f.play, target)?;
        let sq = g.square(r);
        let play = g.mean(sq);
        let play = g.scale(play, self.hyper.play_weight);
        let mut total = g.add(watch, play)?;
        for (m, &logit) in f.aux.iter().enumerate() {
            let labels: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.aux_labels[m]))).collect();
            let bce = bce_with_logits(g, logit, &labels)?;
            let mean = g.mean(bce);
            let term = g.scale(mean, self.hyper.aux_weight);
            total = g.add(total, term)?;
        }
        Ok(total)
    }

    fn init_biases(&mut self, train: &[Impression]) {
        let y: Vec<f64> = train.iter().map(|r| r.watch_time_s).collect();
        let n = y.len() as f64;
        let watch_bias = match self.backbone {
            Backbone::Vr => softplus_inv((y.iter().sum::<f64>() / n).max(1e-3)),
            Backbone::Wlr => {
                let thr = self.hyper.positive_threshold;
                let pos: f64 = y.iter().filter(|&&v| v > thr).sum();
                let neg = y.iter().filter(|&&v| v <= thr).count() as f64;
                (pos / neg).ln()
            }
        };
        self.store.value_mut(self.watch_head.bias).data_mut()[0] = watch_bias;
        self.store.value_mut(self.play_head.bias).data_mut()[0] = y.iter().map(|v| v.ln_1p()).sum::<f64>() / n;
        for m in 0..NUM_AUX {
            let rate = train.iter().filter(|r| r.aux_labels[m]).count() as f64 / n;
            let rate = rate.clamp(1e-4, 1.0 - 1e-4);
            self.store.value_mut(self.aux_heads[m].bias).data_mut()[0] = (rate / (1.0 - rate)).ln();
        }
    }

    fn predict(&self, data: &[Impression]) -> Result<Vec<f64>> {
        Ok(self.emit(data)?.into_iter().map(|o| o.y_hat0).collect())
    }
}

/// Elementwise `softplus(ℓ) - t·ℓ`, the binary cross-entropy of a logit.
fn bce_with_logits(g: &mut Graph, logit: Var, targets: &[f64]) -> Result<Var> {
    let shape = g.value(logit).shape().to_vec();
    let t = g.constant(Tensor::new(shape, targets.to_vec())?);
    let sp = g.softplus(logit);
    let tl = g.mul(t, logit)?;
    g.sub(sp, tl)
}

fn mae_of(pred: &[f64], data: &[Impression]) -> f64 {
    pred.iter()
        .zip(data)
        .map(|(p, r)| (p - r.watch_time_s).abs())
        .sum::<f64>()
        / data.len().max(1) as f64
}

/// Trains a first-stage model with early stopping on validation MAE of
/// `ŷ0`, returning the best checkpoint.
pub fn train_first_stage(
    backbone: Backbone,
    train: &[Impression],
    val: &[Impression],
    hyper: &FirstStageHyper,
) -> Result<FirstStageModel> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Data("first-stage training set is empty".into()));
    }
    let feature_dim = train[0].features.len();
    if train.iter().chain(val).any(|r| r.features.len() != feature_dim) {
        return Err(Error::Data("impressions have inconsistent feature widths".into()));
    }
    if backbone == Backbone::Wlr {
        let thr = hyper.positive_threshold;
        let pos = train.iter().filter(|r| r.watch_time_s > thr).count();
        if pos == 0 || pos == train.len() {
            return Err(Error::Data(format!(
                "WLR needs both positives and negatives (y > {thr}); got {pos} of {}",
                train.len()
            )));
        }
    }
    let rows: Vec<&Impression> = train.iter().collect();
    let scaler = Standardizer::fit(&dense_inputs(&rows, feature_dim), feature_dim + 1);
    let mut model = FirstStageModel::build(backbone, hyper.clone(), feature_dim, scaler);
    model.init_biases(train);
    if backbone == Backbone::Wlr {
        let pos = train.iter().filter(|r| r.watch_time_s > hyper.positive_threshold).count();
        model.mapping = OutputMapping::ScaledExp {
            scale: 1.0 - pos as f64 / train.len() as f64,
        };
    }

    let y_var = crate::stats::variance(&crate::data::impression::watch_times(train)).max(1e-12);
    let mut opt = Optimizer::new(hyper.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let eval_set = if val.is_empty() { train } else { val };
    let mut best = (f64::INFINITY, model.store.clone());
    let mut since_best = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(hyper.batch_size) {
            let rows: Vec<&Impression> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let loss = model.loss(&mut g, &rows, y_var)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "first-stage loss became {value} in epoch {epoch}; last finite epoch: {}",
                    model.history.last().map_or("none".to_string(), |h| h.epoch.to_string())
                )));
            }
            g.backward(loss)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            opt.step(&mut model.store)?;
            loss_sum += value;
            batches += 1;
        }
        let val_mae = mae_of(&model.predict(eval_set)?, eval_set);
        info!("first stage epoch {epoch}: loss {:.5} val MAE {val_mae:.4}", loss_sum / batches as f64);
        model.history.push(FirstStageEpoch {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mae,
        });
        if val_mae < best.0 {
            best = (val_mae, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hyper.patience {
                break;
            }
        }
    }
    if best.0.is_finite() {
        model.store = best.1;
    }
    Ok(model)
}

pub fn train_vr(train: &[Impression], val: &[Impression], hyper: &FirstStageHyper) -> Result<FirstStageModel> {
    train_first_stage(Backbone::Vr, train, val, hyper)
}

pub fn train_wlr(train: &[Impression], val: &[Impression], hyper: &FirstStageHyper) -> Result<FirstStageModel> {
    train_first_stage(Backbone::Wlr, train, val, hyper)
}

/// Freezes the model and emits its signals for `data`.
pub fn freeze_and_emit(model: &mut FirstStageModel, data: &[Impression]) -> Result<Vec<FirstStageOutput>> {
    model.freeze();
    model.emit(data)
}

const EMIT_CHUNK: usize = 2048;

impl FirstStage for FirstStageModel {
    fn emit(&self, data: &[Impression]) -> Result<Vec<FirstStageOutput>> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(EMIT_CHUNK) {
            let rows: Vec<&Impression> = chunk.iter().collect();
            if rows.iter().any(|r| r.features.len() != self.feature_dim) {
                return Err(Error::Data(format!(
                    "first stage expects {} features per impression",
                    self.feature_dim
                )));
            }
            let mut g = Graph::new();
            let f = self.forward(&mut g, &rows)?;
            let rep_dim = self.hyper.tower_dim;
            let common_dim = g.value(f.common).cols();
            for (i, r) in rows.iter().enumerate() {
                let l0 = g.value(f.l0).data()[i];
                let mut aux_logits = [0.0; NUM_AUX];
                for (a, &v) in aux_logits.iter_mut().zip(&f.aux) {
                    *a = g.value(v).data()[i];
                }
                out.push(FirstStageOutput {
                    y_hat0: self.mapping.apply(l0, r.duration_s),
                    l0,
                    play_logit: g.value(f.play).data()[i],
                    aux_logits,
                    tower_reps: f
                        .reps
                        .iter()
                        .map(|&v| g.value(v).data()[i * rep_dim..(i + 1) * rep_dim].to_vec())
                        .collect(),
                    common_rep: g.value(f.common).data()[i * common_dim..(i + 1) * common_dim].to_vec(),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, AuxThresholds, GeneratorConfig};

    fn small_hyper() -> FirstStageHyper {
        FirstStageHyper {
            embed_dim: 4,
            user_buckets: 64,
            item_buckets: 64,
            hidden: vec![16, 8],
            tower_dim: 4,
            epochs: 3,
            batch_size: 64,
            ..FirstStageHyper::default()
        }
    }

    fn constant_rows(n: usize, y: f64) -> Vec<Impression> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| Impression {
                user_id: i as u64 % 17,
                item_id: i as u64 % 23,
                features: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                duration_s: 30.0,
                watch_time_s: y,
                aux_labels: AuxThresholds::default().labels(y, 30.0, 0.0),
            })
            .collect()
    }

    #[test]
    fn constant_label_is_learned() {
        let data = constant_rows(400, 12.0);
        let model = train_vr(&data[..300], &data[300..], &small_hyper()).unwrap();
        for o in model.emit(&data[300..]).unwrap() {
            assert!((o.y_hat0 - 12.0).abs() / 12.0 < 0.01, "{}", o.y_hat0);
        }
    }

    #[test]
    fn emission_is_frozen_and_consistent() {
        let data = generate_synthetic(300, 1, &GeneratorConfig::default()).unwrap();
        let mut model = train_vr(&data[..200], &data[200..], &small_hyper()).unwrap();
        let a = freeze_and_emit(&mut model, &data).unwrap();
        let b = model.emit(&data).unwrap();
        assert_eq!(a, b);
        assert!(model.is_frozen());
        assert!(model.params().ids().all(|id| model.params().is_frozen(id)));
        for o in &a {
            assert_eq!(o.y_hat0, crate::numeric::graph::softplus(o.l0));
            assert!(o.y_hat0 >= 0.0 && o.is_finite());
            assert_eq!(o.tower_reps.len(), NUM_AUX);
            assert_eq!(o.common_rep.len(), 8);
        }
    }

    #[test]
    fn wlr_rejects_single_class_data() {
        let data = constant_rows(50, 4.0);
        assert!(matches!(train_wlr(&data, &[], &small_hyper()), Err(Error::Data(_))));
    }

    #[test]
    fn wlr_respects_duration_cap() {
        let data = generate_synthetic(300, 2, &GeneratorConfig::default()).unwrap();
        let model = train_wlr(&data[..200], &data[200..], &small_hyper()).unwrap();
        for (o, r) in model.emit(&data).unwrap().iter().zip(&data) {
            assert!(o.y_hat0 <= r.duration_s && o.y_hat0 >= 0.0);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train_vr(&[], &[], &small_hyper()).is_err());
    }
}
