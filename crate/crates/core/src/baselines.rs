//! Hand-designed baselines (Adam, SGD with momentum) and the learning-rate
//! sweep that picks the reference Adam run for scoring.

use crate::error::{Error, Result};
use crate::eval::{final_loss, RunRecord};
use crate::optim::{Optimizer, OptimizerRun, StepInfo};
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Result<Self> {
        let cfg = Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) || !beta_ok(self.beta1) || !beta_ok(self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid Adam config {self:?}")));
        }
        Ok(())
    }
}

/// First/second moments and step count, one buffer per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u32,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// Moment recurrence shared by every Adam-style update in the crate.
#[inline]
pub(crate) fn ema(decay: f64, acc: f64, x: f64) -> f64 {
    decay * acc + (1.0 - decay) * x
}

/// Bias-corrected Adam displacement for one coordinate (to be subtracted).
#[inline]
pub(crate) fn adam_delta(lr: f64, m: f64, v: f64, t: u32, beta1: f64, beta2: f64, eps: f64) -> f64 {
    let m_hat = m / (1.0 - beta1.powi(t as i32));
    let v_hat = v / (1.0 - beta2.powi(t as i32));
    lr * (m_hat / (v_hat.sqrt() + eps))
}

/// One Adam step in place. Non-finite gradients leave everything unchanged
/// and report divergence.
pub fn adam_step(cfg: &AdamConfig, params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<StepInfo> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape("Adam: params, grads and state differ in layout".into()));
    }
    if !grads.all_finite() {
        return Ok(StepInfo { eta: None, diverged: true });
    }
    state.t += 1;
    let t = state.t;
    for (i, g) in grads.tensors().enumerate() {
        let m = state.m.at_mut(i).data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = ema(cfg.beta1, *mi, *gi);
        }
        let v = state.v.at_mut(i).data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            *vi = ema(cfg.beta2, *vi, gi * gi);
        }
        let (m, v) = (state.m.at(i).data(), state.v.at(i).data());
        for ((p, mi), vi) in params.at_mut(i).data_mut().iter_mut().zip(m).zip(v) {
            *p -= adam_delta(cfg.lr, *mi, *vi, t, cfg.beta1, cfg.beta2, cfg.eps);
        }
    }
    Ok(StepInfo { eta: None, diverged: !params.all_finite() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdmConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl SgdmConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, momentum: 0.9 }
    }
}

/// Heavy-ball SGD: `b ← μb + g; θ ← θ − lr·b`.
pub fn sgdm_step(cfg: &SgdmConfig, params: &mut ParamSet, grads: &ParamSet, buf: &mut ParamSet) -> Result<StepInfo> {
    if !params.same_layout(grads) || !params.same_layout(buf) {
        return Err(Error::Shape("SGD: params, grads and buffer differ in layout".into()));
    }
    if !grads.all_finite() {
        return Ok(StepInfo { eta: None, diverged: true });
    }
    for (i, g) in grads.tensors().enumerate() {
        let b = buf.at_mut(i).data_mut();
        for (bi, gi) in b.iter_mut().zip(g.data()) {
            *bi = cfg.momentum * *bi + gi;
        }
        let b = buf.at(i).data();
        for (p, bi) in params.at_mut(i).data_mut().iter_mut().zip(b) {
            *p -= cfg.lr * bi;
        }
    }
    Ok(StepInfo { eta: None, diverged: !params.all_finite() })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    Adam(AdamConfig),
    Sgdm(SgdmConfig),
}

impl Baseline {
    pub fn lr(&self) -> f64 {
        match self {
            Baseline::Adam(c) => c.lr,
            Baseline::Sgdm(c) => c.lr,
        }
    }
}

enum BaselineRun<'a> {
    Adam(&'a AdamConfig, AdamState),
    Sgdm(&'a SgdmConfig, ParamSet),
}

impl OptimizerRun for BaselineRun<'_> {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, _loss: f64) -> Result<StepInfo> {
        match self {
            BaselineRun::Adam(cfg, state) => adam_step(cfg, params, grads, state),
            BaselineRun::Sgdm(cfg, buf) => sgdm_step(cfg, params, grads, buf),
        }
    }
}

impl Optimizer for Baseline {
    fn id(&self) -> String {
        match self {
            Baseline::Adam(c) => format!("adam_lr{:e}", c.lr),
            Baseline::Sgdm(c) => format!("sgdm_lr{:e}", c.lr),
        }
    }

    fn start<'a>(&'a self, params: &ParamSet, _horizon: usize) -> Result<Box<dyn OptimizerRun + 'a>> {
        Ok(match self {
            Baseline::Adam(c) => Box::new(BaselineRun::Adam(c, AdamState::new(params))),
            Baseline::Sgdm(c) => Box::new(BaselineRun::Sgdm(c, params.zeros_like())),
        })
    }
}

/// Strictly increasing positive learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    lrs: Vec<f64>,
}

impl SweepSpec {
    pub fn new(lrs: Vec<f64>) -> Result<Self> {
        if lrs.is_empty() || lrs.iter().any(|&l| !(l > 0.0 && l.is_finite())) || lrs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("sweep must be positive and strictly increasing: {lrs:?}")));
        }
        Ok(Self { lrs })
    }

    pub fn lrs(&self) -> &[f64] {
        &self.lrs
    }

    pub fn len(&self) -> usize {
        self.lrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lrs.is_empty()
    }
}

fn half_power_exponent(x: f64) -> Result<i32> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidArgument(format!("sweep bound {x} must be positive")));
    }
    let e = 2.0 * x.log10();
    let k = e.round();
    if (e - k).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("sweep bound {x} is not a half power of ten")));
    }
    Ok(k as i32)
}

/// `10^(k/2)` parsed from its decimal form, so whole powers are exact literals.
fn half_power(k: i32) -> f64 {
    let text = if k % 2 == 0 {
        format!("1e{}", k / 2)
    } else {
        format!("3.1622776601683795e{}", k.div_euclid(2))
    };
    text.parse().expect("valid float literal")
}

/// Every half power of ten in `[lo, hi]`; the defaults give the 15-point sweep 1e-7 … 1.
pub fn half_power_sweep(lo: f64, hi: f64) -> Result<SweepSpec> {
    let (a, b) = (half_power_exponent(lo)?, half_power_exponent(hi)?);
    if a > b {
        return Err(Error::InvalidArgument(format!("sweep bounds reversed: {lo} > {hi}")));
    }
    SweepSpec::new((a..=b).map(half_power).collect())
}

pub const DEFAULT_SWEEP_LO: f64 = 1e-7;
pub const DEFAULT_SWEEP_HI: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTrial {
    pub lr: f64,
    pub record: RunRecord,
}

/// Index of the trial with the lowest smoothed final loss. Diverged or
/// non-finite runs are excluded; exact ties go to the smaller learning rate.
pub fn best_trial(trials: &[SweepTrial]) -> Result<usize> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("no sweep trials".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, trial) in trials.iter().enumerate() {
        let fl = final_loss(&trial.record);
        if !fl.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, b)) => fl < b || (fl == b && trial.lr < trials[j].lr),
        };
        if better {
            best = Some((i, fl));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| {
        Error::NoValidBaseline(format!("all {} trials of task {:?} diverged", trials.len(), trials[0].record.task_id))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = AdamConfig::new(0.1).unwrap();
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&cfg, &mut p, &single(2.0), &mut s).unwrap();
        assert!((p.at(0).data()[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_grad_is_a_fixed_point() {
        let cfg = AdamConfig::new(0.1).unwrap();
        let mut p = single(1.5);
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&cfg, &mut p, &single(0.0), &mut s).unwrap();
        }
        assert_eq!(p.at(0).data()[0], 1.5);
    }

    #[test]
    fn adam_flags_non_finite_grads() {
        let cfg = AdamConfig::new(0.1).unwrap();
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        let info = adam_step(&cfg, &mut p, &single(f64::NAN), &mut s).unwrap();
        assert!(info.diverged);
        assert_eq!(p, single(1.0));
        assert!(AdamConfig::new(-1.0).is_err());
    }

    #[test]
    fn sgdm_geometric_accumulation() {
        let cfg = SgdmConfig { lr: 0.5, momentum: 0.9 };
        let mut p = single(0.0);
        let mut b = p.zeros_like();
        let g = 0.3;
        for _ in 0..7 {
            sgdm_step(&cfg, &mut p, &single(g), &mut b).unwrap();
        }
        let expected = g * (1.0 - 0.9f64.powi(7)) / (1.0 - 0.9);
        assert!((b.at(0).data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn sgdm_without_momentum_is_plain_sgd() {
        let cfg = SgdmConfig { lr: 0.1, momentum: 0.0 };
        let mut p = single(1.0);
        let mut b = p.zeros_like();
        sgdm_step(&cfg, &mut p, &single(2.0), &mut b).unwrap();
        sgdm_step(&cfg, &mut p, &single(-1.0), &mut b).unwrap();
        assert!((p.at(0).data()[0] - (1.0 - 0.2 + 0.1)).abs() < 1e-15);
        let mut q = single(0.0);
        let mut z = q.zeros_like();
        sgdm_step(&cfg, &mut q, &single(0.0), &mut z).unwrap();
        assert_eq!(q, single(0.0));
    }

    #[test]
    fn default_sweep_has_fifteen_points() {
        let s = half_power_sweep(DEFAULT_SWEEP_LO, DEFAULT_SWEEP_HI).unwrap();
        assert_eq!(s.len(), 15);
        assert_eq!(s.lrs()[0], 1e-7);
        assert_eq!(*s.lrs().last().unwrap(), 1.0);
        assert!(s.lrs().windows(2).all(|w| w[0] < w[1]));
        assert!((s.lrs()[1] / 1e-7 - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_misaligned_sweeps() {
        assert_eq!(half_power_sweep(1e-3, 1e-3).unwrap().lrs(), [1e-3]);
        assert!(half_power_sweep(2e-3, 1.0).is_err());
        assert!(half_power_sweep(1.0, 1e-3).is_err());
        assert!(SweepSpec::new(vec![1e-3, 1e-3]).is_err());
    }

    fn trial(lr: f64, final_value: f64) -> SweepTrial {
        SweepTrial { lr, record: RunRecord::from_losses("t", "adam", 0, vec![final_value; 12], None) }
    }

    #[test]
    fn best_trial_selection() {
        assert_eq!(best_trial(&[trial(1e-3, 2.0), trial(1e-2, 1.5), trial(1e-1, 1.9)]).unwrap(), 1);
        assert_eq!(best_trial(&[trial(1e-3, f64::NAN), trial(1e-2, 1.9)]).unwrap(), 1);
        assert_eq!(best_trial(&[trial(1e-2, 1.5), trial(1e-3, 1.5)]).unwrap(), 1);
        assert!(matches!(
            best_trial(&[trial(1e-3, f64::INFINITY), trial(1e-2, f64::NAN)]),
            Err(Error::NoValidBaseline(_))
        ));
    }
}
