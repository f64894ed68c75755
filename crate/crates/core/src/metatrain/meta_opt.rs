use crate::baselines::{adam_delta, ema};
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm the meta-gradient is clipped to.
    pub clip_norm: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: 1.0 }
    }
}

/// Moments over the trainable coordinates only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u32,
}

impl AdamWState {
    pub fn new(trainable: &ParamSet) -> Self {
        Self { m: trainable.zeros_like(), v: trainable.zeros_like(), t: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaStepInfo {
    /// Norm of the estimate before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    /// The estimate was non-finite and nothing changed.
    pub skipped: bool,
}

/// Clipped AdamW step on the coordinates of `phi` named in `grad`; every other
/// tensor of `phi` is left untouched.
pub fn adamw_meta_step(cfg: &AdamWConfig, state: &mut AdamWState, phi: &mut ParamSet, grad: &ParamSet) -> Result<MetaStepInfo> {
    if !grad.same_layout(&state.m) {
        return Err(Error::Shape("meta-gradient does not match the optimizer state".into()));
    }
    let grad_norm = grad.l2_norm();
    if !grad_norm.is_finite() {
        log::warn!("non-finite meta-gradient; skipping meta step");
        return Ok(MetaStepInfo { grad_norm, clipped: false, skipped: true });
    }
    let clipped = grad_norm > cfg.clip_norm;
    let scale = if clipped { cfg.clip_norm / grad_norm } else { 1.0 };
    if clipped {
        log::debug!("meta-gradient norm {grad_norm:.4e} clipped to {}", cfg.clip_norm);
    }
    state.t += 1;
    let t = state.t;
    for (i, (name, g)) in grad.iter().enumerate() {
        let p = phi
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("meta-gradient names unknown tensor {name:?}")))?;
        if !p.same_shape(g) {
            return Err(Error::Shape(format!("meta-gradient for {name:?} has the wrong shape")));
        }
        let m = state.m.at_mut(i).data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = ema(cfg.beta1, *mi, gi * scale);
        }
        let v = state.v.at_mut(i).data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            let gs = gi * scale;
            *vi = ema(cfg.beta2, *vi, gs * gs);
        }
        let (m, v) = (state.m.at(i).data(), state.v.at(i).data());
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let decay = cfg.lr * cfg.weight_decay * *pi;
            *pi -= adam_delta(cfg.lr, *mi, *vi, t, cfg.beta1, cfg.beta2, cfg.eps) + decay;
        }
    }
    Ok(MetaStepInfo { grad_norm, clipped, skipped: false })
}
