//! AdamW with decoupled weight decay, and learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { lr: f64 },
    /// Linear rise from 0 at step 0 to `peak` at `warmup_steps`, then linear
    /// decay to 0 at `total_steps`.
    LinearWarmupDecay { peak: f64, warmup_steps: usize, total_steps: usize },
}

impl Schedule {
    /// Warmup covering `warmup_fraction` of `total_steps` (at least one step).
    pub fn linear(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).clamp(1, total_steps.max(1));
        Schedule::LinearWarmupDecay { peak, warmup_steps, total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::LinearWarmupDecay { peak, warmup_steps, total_steps } => {
                if step < warmup_steps {
                    peak * step as f64 / warmup_steps as f64
                } else if step >= total_steps {
                    0.0
                } else {
                    peak * (total_steps - step) as f64 / (total_steps - warmup_steps).max(1) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied to weight matrices and embeddings, not to biases or norms.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub cfg: AdamWConfig,
    m: Params<S>,
    v: Params<S>,
    t: i32,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(cfg: AdamWConfig, like: &Params<S>) -> Self {
        Self { cfg, m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut Params<S>, grads: &Params<S>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (S::lit(self.cfg.beta1), S::lit(self.cfg.beta2));
        let c1 = S::one() - b1.powi(self.t);
        let c2 = S::one() - b2.powi(self.t);
        let (lr, eps, wd) = (S::lit(lr), S::lit(self.cfg.eps), S::lit(self.cfg.weight_decay));
        let g = grads.named();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(g).zip(ms).zip(vs) {
            let decay = if p.shape.len() == 2 { wd } else { S::zero() };
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (S::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (S::one() - b2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                let pi = p.data[i];
                p.data[i] = pi - lr * (mhat / (vhat.sqrt() + eps) + decay * pi);
            }
        }
    }
}
