use std::fmt;
use std::str::FromStr;

use crate::baselines::adam_delta;
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerRun, StepInfo};
use crate::rng::RngStream;
use crate::tensor::ParamSet;

use super::features::per_param_features;
use super::rule::{init_rule, rule_heads, apply_heads, NormKind};
use super::scheduler::{build_scheduler_input, init_scheduler, scheduler_step, SchedulerForm};
use super::state::CeloState;
use super::{ADAM_RULE_LR, MOMENTUM_DECAYS, SECOND_MOMENT_DECAY};

pub const RULE_PREFIX: &str = "rule/";
pub const SCHEDULER_PREFIX: &str = "scheduler/";

/// Learned weights φ plus the fixed scalars of the update.
#[derive(Clone, Debug, PartialEq)]
pub struct CeloParams {
    pub rule: ParamSet,
    pub scheduler: ParamSet,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub norm: NormKind,
}

impl CeloParams {
    pub fn init(rng: &RngStream) -> Self {
        Self {
            rule: init_rule(&rng.child("rule", 0)),
            scheduler: init_scheduler(&rng.child("scheduler", 0)),
            alpha: 1.0,
            lambda1: 1e-3,
            lambda2: 1e-3,
            norm: NormKind::L2,
        }
    }

    /// All learned weights as one set, names prefixed `rule/` or `scheduler/`.
    pub fn to_meta(&self) -> ParamSet {
        let prefixed = |prefix: &str, set: &ParamSet| {
            set.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())).collect::<Vec<_>>()
        };
        prefixed(RULE_PREFIX, &self.rule)
            .into_iter()
            .chain(prefixed(SCHEDULER_PREFIX, &self.scheduler))
            .collect()
    }

    /// Copy with weights replaced from a set laid out like [`Self::to_meta`].
    pub fn with_meta(&self, meta: &ParamSet) -> Result<Self> {
        if !meta.same_layout(&self.to_meta()) {
            return Err(Error::Shape("meta parameters do not match the Celo layout".into()));
        }
        let strip = |prefix: &str| -> ParamSet {
            meta.iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .collect()
        };
        Ok(Self { rule: strip(RULE_PREFIX), scheduler: strip(SCHEDULER_PREFIX), ..self.clone() })
    }
}

/// Ablation variants of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    /// Learned rule scaled by the learned scheduler.
    #[default]
    Full,
    /// Learned rule with η ≡ 1.
    NoScheduler,
    /// Adam(1e-3) direction scaled by the learned scheduler.
    AdamRuleWithScheduler,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_scheduler" => Ok(Variant::NoScheduler),
            "adam_rule_with_scheduler" => Ok(Variant::AdamRuleWithScheduler),
            other => Err(Error::InvalidArgument(format!("unknown Celo variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoScheduler => "no_scheduler",
            Variant::AdamRuleWithScheduler => "adam_rule_with_scheduler",
        })
    }
}

/// A configured learned optimizer: weights, variant and scheduler form.
#[derive(Clone, Debug, PartialEq)]
pub struct Celo {
    pub params: CeloParams,
    pub variant: Variant,
    pub form: SchedulerForm,
}

pub fn make_variant(params: CeloParams, kind: &str) -> Result<Celo> {
    Ok(Celo { params, variant: kind.parse()?, form: SchedulerForm::Exp })
}

/// Outcome of one step before it is applied: the global scale and each
/// tensor's displacement (already multiplied by η).
#[derive(Clone, Debug, PartialEq)]
pub struct CeloStep {
    pub eta: f64,
    pub deltas: Vec<Vec<f64>>,
}

impl Celo {
    pub fn new(params: CeloParams, variant: Variant) -> Self {
        Self { params, variant, form: SchedulerForm::Exp }
    }

    pub fn init_state(&self, theta: &ParamSet, horizon: usize) -> Result<CeloState> {
        CeloState::new(theta, horizon)
    }

    /// Global step scale for the current (already updated) state. Advances
    /// the scheduler's recurrent state.
    fn schedule(&self, state: &mut CeloState, loss: f64) -> Result<f64> {
        if self.variant == Variant::NoScheduler {
            return Ok(1.0);
        }
        let input = build_scheduler_input(state, loss);
        let out = scheduler_step(&self.params.scheduler, self.params.alpha, self.form, &state.lstm, &input)?;
        state.lstm = out.lstm;
        Ok(out.eta)
    }

    /// Unscheduled displacement for tensor `index`.
    pub fn rule_delta(&self, state: &CeloState, index: usize, p: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        match self.variant {
            Variant::AdamRuleWithScheduler => {
                let acc = &state.tensors[index];
                let t = state.step as u32;
                Ok(acc.momenta[0]
                    .iter()
                    .zip(&acc.second_moment)
                    .map(|(&m, &v)| adam_delta(ADAM_RULE_LR, m, v, t, MOMENTUM_DECAYS[0], SECOND_MOMENT_DECAY, 1e-8))
                    .collect())
            }
            Variant::Full | Variant::NoScheduler => {
                let features = per_param_features(state, index, p, g)?;
                let (d, m) = rule_heads(&self.params.rule, &features)?;
                Ok(apply_heads(&d, &m, p, self.params.lambda1, self.params.lambda2, self.params.norm))
            }
        }
    }

    /// Accumulator update, schedule, and per-tensor displacements for one step.
    /// Returns `None` when the step diverged (state is flagged).
    pub fn plan_step(&self, theta: &ParamSet, grads: &ParamSet, loss: f64, state: &mut CeloState) -> Result<Option<CeloStep>> {
        if !theta.same_layout(grads) {
            return Err(Error::Shape("parameters and gradients differ in layout".into()));
        }
        state.update_accumulators(grads, loss)?;
        if state.diverged {
            return Ok(None);
        }
        let eta = self.schedule(state, loss)?;
        if !eta.is_finite() || (self.form == SchedulerForm::Exp && eta <= 0.0) {
            state.diverged = true;
            return Ok(None);
        }
        let mut deltas = Vec::with_capacity(theta.len());
        for (i, (p, g)) in theta.tensors().zip(grads.tensors()).enumerate() {
            let mut delta = self.rule_delta(state, i, p.data(), g.data())?;
            for v in delta.iter_mut() {
                *v *= eta;
            }
            deltas.push(delta);
        }
        Ok(Some(CeloStep { eta, deltas }))
    }

    /// Full update: `θ ← θ − η·Δθ_rule`.
    pub fn update(&self, theta: &mut ParamSet, grads: &ParamSet, loss: f64, state: &mut CeloState) -> Result<StepInfo> {
        let Some(step) = self.plan_step(theta, grads, loss, state)? else {
            return Ok(StepInfo { eta: None, diverged: true });
        };
        for (i, delta) in step.deltas.iter().enumerate() {
            for (p, d) in theta.at_mut(i).data_mut().iter_mut().zip(delta) {
                *p -= d;
            }
        }
        let diverged = !theta.all_finite();
        state.diverged |= diverged;
        Ok(StepInfo { eta: Some(step.eta), diverged })
    }
}

struct CeloRun<'a> {
    celo: &'a Celo,
    state: CeloState,
}

impl OptimizerRun for CeloRun<'_> {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, loss: f64) -> Result<StepInfo> {
        self.celo.update(params, grads, loss, &mut self.state)
    }
}

impl Optimizer for Celo {
    fn id(&self) -> String {
        match (self.variant, self.form) {
            (Variant::Full, SchedulerForm::Exp) => "celo".into(),
            (Variant::Full, form) => format!("celo_{form}"),
            (variant, _) => format!("celo_{variant}"),
        }
    }

    fn start<'a>(&'a self, params: &ParamSet, horizon: usize) -> Result<Box<dyn OptimizerRun + 'a>> {
        Ok(Box::new(CeloRun { celo: self, state: self.init_state(params, horizon)? }))
    }
}
