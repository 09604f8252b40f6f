//! SGD with Nesterov momentum, coupled L2 weight decay and a step schedule.
//!
//! One step with learning rate `lr`, momentum `μ` and decay `κ`:
//!
//! ```text
//! g' = g + κ w
//! v  ← μ v - lr g'
//! w  ← w + μ v - lr g'
//! ```

use crate::error::{Error, Result};
use crate::net::{Gradients, WeightStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// When false, biases are exempt from weight decay.
    pub decay_biases: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_biases: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub velocity: WeightStore<F>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_biases: bool,
    pub lr0: f64,
    pub lr: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(config: &SgdConfig, weights: &WeightStore<F>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            velocity: weights.zeros_like(),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            decay_biases: config.decay_biases,
            lr0: config.lr0,
            lr: config.lr0,
        })
    }
}

#[inline]
fn nesterov<F: Real>(w: &mut F, v: &mut F, g: F, mu: F, lr: F, decay: F) {
    let g = g + decay * *w;
    *v = mu * *v - lr * g;
    *w = *w + mu * *v - lr * g;
}

/// Applies one Nesterov step in place. Rejects non-finite gradients without
/// touching the weights.
pub fn sgd_step<F: Real>(
    weights: &mut WeightStore<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if weights.layers.len() != grads.layers.len()
        || weights.layers.len() != state.velocity.layers.len()
    {
        return Err(Error::invalid("optimizer buffers do not match the weights"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("weight gradient"));
    }
    let mu = F::from_f64_lossy(state.momentum);
    let lr = F::from_f64_lossy(state.lr);
    let decay = F::from_f64_lossy(state.weight_decay);
    let bias_decay = if state.decay_biases { decay } else { F::zero() };
    for ((layer, grad), vel) in weights
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity.layers)
    {
        if layer.weight.dim() != grad.weight.dim() || layer.bias.len() != grad.bias.len() {
            return Err(Error::invalid("gradient shape does not match the weights"));
        }
        ndarray::Zip::from(&mut layer.weight)
            .and(&mut vel.weight)
            .and(&grad.weight)
            .for_each(|w, v, &g| nesterov(w, v, g, mu, lr, decay));
        ndarray::Zip::from(&mut layer.bias)
            .and(&mut vel.bias)
            .and(&grad.bias)
            .for_each(|w, v, &g| nesterov(w, v, g, mu, lr, bias_decay));
    }
    Ok(())
}

/// `lr0` until half of the epochs, `lr0 / 10` until three quarters, `lr0 / 100` after.
pub fn lr_schedule(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    if epoch < total_epochs / 2 {
        lr0
    } else if epoch < 3 * total_epochs / 4 {
        lr0 / 10.0
    } else {
        lr0 / 100.0
    }
}
