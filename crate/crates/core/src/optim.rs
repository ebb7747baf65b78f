//! First-order optimizers with per-group learning rates.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelAssembly, N_GROUPS};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    /// `buf = momentum * buf + g; p -= lr * buf` (no dampening).
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Sgd {
            momentum: default_momentum(),
            weight_decay: 0.0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerSpec::Sgd {
                momentum,
                weight_decay,
            } => (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerSpec::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
                    && weight_decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub steps: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: ArrayD<f64>,
    /// Second moment (Adam only; empty for SGD).
    pub second: Option<ArrayD<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    spec: OptimizerSpec,
    slots: BTreeMap<String, SlotState>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            slots: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn slots(&self) -> &BTreeMap<String, SlotState> {
        &self.slots
    }

    pub fn restore(&mut self, slots: BTreeMap<String, SlotState>) {
        self.slots = slots;
    }

    /// Applies one update to every trainable parameter of `model`.
    pub fn step(&mut self, model: &mut ModelAssembly, lrs: [f64; N_GROUPS]) {
        model.for_each_trainable(&mut |name, group, p| self.update(name, lrs[group], p));
    }

    pub fn update(&mut self, name: &str, lr: f64, p: &mut Param) {
        let spec = self.spec;
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| SlotState {
            steps: 0,
            first: ArrayD::zeros(p.value.raw_dim()),
            second: matches!(spec, OptimizerSpec::Adam { .. })
                .then(|| ArrayD::zeros(p.value.raw_dim())),
        });
        slot.steps += 1;
        match spec {
            OptimizerSpec::Sgd {
                momentum,
                weight_decay,
            } => {
                Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(&mut slot.first)
                    .for_each(|w, &g, b| {
                        let g = g + weight_decay * *w;
                        if momentum == 0.0 {
                            *w -= lr * g;
                        } else {
                            *b = momentum * *b + g;
                            *w -= lr * *b;
                        }
                    });
            }
            OptimizerSpec::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = slot.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let second = slot.second.as_mut().expect("adam slot has second moment");
                Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(&mut slot.first)
                    .and(second)
                    .for_each(|w, &g, m, v| {
                        let g = g + weight_decay * *w;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
            }
        }
    }
}
