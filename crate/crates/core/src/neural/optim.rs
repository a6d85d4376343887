//! Adam with linear warmup followed by inverse-time decay.

use serde::{Deserialize, Serialize};

use super::tensor::{Parameters, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    /// Inverse-time decay constant per epoch: `1 / (1 + decay_rate · epochs_after_warmup)`.
    pub decay_rate: f64,
    /// Converts steps into (fractional) epochs for the decay term.
    pub steps_per_epoch: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 2e-3,
            warmup_steps: 200,
            decay_rate: 0.01,
            steps_per_epoch: 100,
        }
    }
}

impl Schedule {
    /// Learning rate used for the update that brings the step counter to `step` (1-based).
    pub fn lr(&self, step: u64) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        };
        let after = step.saturating_sub(self.warmup_steps) as f64;
        let epochs = after / self.steps_per_epoch.max(1) as f64;
        self.base_lr * warm / (1.0 + self.decay_rate * epochs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub first_moment: Parameters<T>,
    pub second_moment: Parameters<T>,
    pub step: u64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Parameters<T>, schedule: Schedule, adam: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            schedule,
            adam,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step.max(1))
    }

    /// One Adam update. Returns the learning rate that was applied.
    pub fn step(&mut self, params: &mut Parameters<T>, grads: &Parameters<T>) -> Result<f64> {
        for g in grads.tensors() {
            if !g.all_finite() {
                return Err(Error::numeric(format!("gradient of {}", g.name)));
            }
        }
        let clip = match self.adam.clip_norm {
            Some(max) => {
                let norm = grads.global_norm().to_f64().unwrap_or(f64::INFINITY);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let lr = self.schedule.lr(self.step);
        let (b1, b2) = (self.adam.beta1, self.adam.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let clip = T::of(clip);
        let step_size = T::of(lr / bc1);
        let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.adam.eps);

        let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
        let moments = self
            .first_moment
            .tensors_mut()
            .iter_mut()
            .zip(self.second_moment.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(moments) {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                let gi = gi * clip;
                *mi = tb1 * *mi + one_b1 * gi;
                *vi = tb2 * *vi + one_b2 * gi * gi;
                *pi -= step_size * *mi / ((*vi).sqrt() * inv_bc2_sqrt + eps);
            }
        }
        Ok(lr)
    }
}
