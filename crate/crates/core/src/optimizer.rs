//! AdamW with decoupled weight decay and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.learning_rate > 0.0
            && self.clip_norm > 0.0
            && self.weight_decay >= 0.0
            && self.epsilon >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("optimizer config out of range: {self:?}")))
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl OptimState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step_count: 0,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `clip_norm / g` when the concatenated norm `g`
/// exceeds `clip_norm`. Returns the scale applied (1.0 when untouched).
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> Result<f64> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient before clipping".into()));
    }
    let total = global_norm(grads);
    if total <= clip_norm {
        return Ok(1.0);
    }
    let scale = clip_norm / total;
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok(scale)
}

/// One AdamW update. `decay[i]` selects which tensors receive weight decay;
/// decay uses the pre-update parameter value.
pub fn step(
    params: &mut [Tensor],
    grads: &[Tensor],
    decay: &[bool],
    state: &mut OptimState,
    config: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != decay.len()
        || params.len() != state.first_moment.len()
    {
        return Err(Error::shape("adamw", "parameter, gradient and state counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::shape(
                "adamw",
                format!("tensor {i}: param {:?} grad {:?}", p.shape(), g.shape()),
            ));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let lr = config.learning_rate;

    for (i, p) in params.iter_mut().enumerate() {
        let wd = if decay[i] { config.weight_decay } else { 0.0 };
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = config.beta1 * *mv + (1.0 - config.beta1) * gv;
        }
        let v = state.second_moment[i].data_mut();
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = config.beta2 * *vv + (1.0 - config.beta2) * gv * gv;
        }
        let m = state.first_moment[i].data();
        let v = state.second_moment[i].data();
        for ((theta, mv), vv) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            let pre = *theta;
            *theta = pre - lr * (m_hat / (v_hat.sqrt() + config.epsilon)) - lr * wd * pre;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("parameter {i} after update")));
        }
    }
    Ok(())
}
