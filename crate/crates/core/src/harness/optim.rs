use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::ParamStore;
use crate::numcore::Element;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// AdamW with decoupled weight decay and per-parameter bias correction.
/// Moment buffers are created the first time a parameter receives a
/// gradient, so frozen parameters never enter the state.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, state: Vec::new() }
    }

    /// Number of parameters holding moment buffers.
    pub fn tracked(&self) -> usize {
        self.state.iter().flatten().count()
    }

    pub fn is_tracked(&self, index: usize) -> bool {
        self.state.get(index).is_some_and(|s| s.is_some())
    }

    /// Applies one update. `grads` is indexed like the store; `None` entries
    /// (unreached or untrainable parameters) are left untouched.
    pub fn step<T: Element>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) -> Result<(), HarnessError> {
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for ((_, p), g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(HarnessError::NonFiniteGradient {
                        param: p.name.clone(),
                        index: i,
                    });
                }
            }
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (i, ((_, p), g)) in store.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if p.frozen || !p.trainable {
                continue;
            }
            let s = self.state[i].get_or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                step: 0,
            });
            s.step += 1;
            let bc1 = 1.0 - beta1.powi(s.step as i32);
            let bc2 = 1.0 - beta2.powi(s.step as i32);
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(&mut s.m).zip(&mut s.v) {
                let g = g.to_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                let x = w.to_f64();
                *w = T::from_f64(x - lr * (update + weight_decay * x));
            }
        }
        Ok(())
    }
}

/// Patience-based stopping on a score that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records an epoch's score; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = Some(epoch);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}
