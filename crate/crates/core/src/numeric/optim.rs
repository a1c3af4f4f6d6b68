//! First-order optimizers over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held by `store`.
    /// Frozen parameters and parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = &store.get(id).grad {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(store.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        let t = self.step as f64;
        for id in store.ids() {
            if store.is_frozen(id) {
                continue;
            }
            let Some(grad) = store.get(id).grad.clone() else {
                continue;
            };
            match self.config {
                OptimizerConfig::Sgd { lr } => {
                    let value = store.value_mut(id);
                    for (w, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *w -= lr * g;
                    }
                }
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let m = self.first[id.0].get_or_insert_with(|| Tensor::zeros(grad.shape()));
                    for (mv, g) in m.data_mut().iter_mut().zip(grad.data()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * g;
                    }
                    let v = self.second[id.0].get_or_insert_with(|| Tensor::zeros(grad.shape()));
                    for (vv, g) in v.data_mut().iter_mut().zip(grad.data()) {
                        *vv = beta2 * *vv + (1.0 - beta2) * g * g;
                    }
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    let m = self.first[id.0].as_ref().expect("moment");
                    let v = self.second[id.0].as_ref().expect("moment");
                    let value = store.value_mut(id);
                    for ((w, mv), vv) in value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                        let mhat = mv / bc1;
                        let vhat = vv / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
