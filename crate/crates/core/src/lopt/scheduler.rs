use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{init_lstm, lstm_step, LstmSpec, LstmState};
use crate::rng::RngStream;
use crate::tensor::{ParamSet, Tensor};

use super::state::CeloState;
use super::{LOSS_EMA_DECAYS, PROGRESS_TIMESCALES, SCHEDULER_HIDDEN, SCHEDULER_INPUT};

pub const PROJ_WEIGHT: &str = "proj.weight";
pub const PROJ_BIAS: &str = "proj.bias";
const LOSS_EPS: f64 = 1e-12;
/// Upper clamp of the `linear_clip` form.
pub const LINEAR_CLIP_MAX: f64 = 10.0;

pub fn lstm_spec() -> LstmSpec {
    LstmSpec { input: SCHEDULER_INPUT, hidden: SCHEDULER_HIDDEN }
}

/// LSTM weights plus a zero-initialized scalar projection, so that a fresh
/// scheduler emits `o = 0`.
pub fn init_scheduler(rng: &RngStream) -> ParamSet {
    let mut p = init_lstm(lstm_spec(), rng);
    p.insert(PROJ_WEIGHT, Tensor::zeros(&[SCHEDULER_HIDDEN])).expect("unique");
    p.insert(PROJ_BIAS, Tensor::zeros(&[1])).expect("unique");
    p
}

/// Progress features followed by loss features; every entry lies in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerInput(pub [f64; SCHEDULER_INPUT]);

fn log_ratio(a: f64, b: f64) -> f64 {
    (a.max(LOSS_EPS) / b.max(LOSS_EPS)).ln().tanh()
}

pub fn build_scheduler_input(state: &CeloState, loss: f64) -> SchedulerInput {
    let t = state.step as f64;
    let mut x = [0.0; SCHEDULER_INPUT];
    x[0] = (t / state.horizon as f64).min(1.0);
    for (slot, k) in x[1..4].iter_mut().zip(PROGRESS_TIMESCALES) {
        *slot = (t / k).tanh();
    }
    let l0 = state.initial_loss.unwrap_or(loss);
    for (slot, ema) in x[4..4 + LOSS_EMA_DECAYS.len()].iter_mut().zip(state.loss_emas) {
        *slot = if state.initial_loss.is_some() { log_ratio(loss, ema) } else { 0.0 };
    }
    x[SCHEDULER_INPUT - 1] = log_ratio(loss, l0);
    SchedulerInput(x)
}

/// Maps the scheduler's raw output `o` to the step scale η.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SchedulerForm {
    /// η = α·o
    Linear,
    /// η = clamp(α·o, 0, 10)
    LinearClip,
    /// η = α·exp(o)
    #[default]
    Exp,
}

impl SchedulerForm {
    pub fn eta(self, o: f64, alpha: f64) -> f64 {
        match self {
            SchedulerForm::Linear => alpha * o,
            SchedulerForm::LinearClip => (alpha * o).clamp(0.0, LINEAR_CLIP_MAX),
            SchedulerForm::Exp => alpha * o.exp(),
        }
    }
}

impl FromStr for SchedulerForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SchedulerForm::Linear),
            "linear_clip" => Ok(SchedulerForm::LinearClip),
            "exp" => Ok(SchedulerForm::Exp),
            other => Err(Error::InvalidArgument(format!("unknown scheduler form {other:?}"))),
        }
    }
}

impl fmt::Display for SchedulerForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerForm::Linear => "linear",
            SchedulerForm::LinearClip => "linear_clip",
            SchedulerForm::Exp => "exp",
        })
    }
}

/// Alias used by configuration code: resolve a form by name.
pub fn scheduler_variant(kind: &str) -> Result<SchedulerForm> {
    kind.parse()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerOutput {
    pub eta: f64,
    pub raw: f64,
    pub lstm: LstmState,
}

pub fn scheduler_step(
    params: &ParamSet,
    alpha: f64,
    form: SchedulerForm,
    lstm: &LstmState,
    input: &SchedulerInput,
) -> Result<SchedulerOutput> {
    let next = lstm_step(lstm_spec(), params, lstm, &input.0)?;
    let w = params.expect(PROJ_WEIGHT)?.data();
    let b = params.expect(PROJ_BIAS)?.data()[0];
    let raw = b + next.h.iter().zip(w).map(|(h, w)| h * w).sum::<f64>();
    Ok(SchedulerOutput { eta: form.eta(raw, alpha), raw, lstm: next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamSet;

    fn state(horizon: usize) -> CeloState {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        CeloState::new(&p, horizon).unwrap()
    }

    #[test]
    fn fresh_state_features() {
        let x = build_scheduler_input(&state(100), 2.3);
        assert!(x.0.iter().all(|&v| v == 0.0), "{:?}", x.0);
    }

    #[test]
    fn constant_loss_keeps_loss_features_zero() {
        let mut s = state(50);
        let g = {
            let mut p = ParamSet::new();
            p.insert("w", Tensor::filled(&[2], 0.1)).unwrap();
            p
        };
        for _ in 0..50 {
            s.update_accumulators(&g, 1.7).unwrap();
            let x = build_scheduler_input(&s, 1.7);
            assert!(x.0[4..].iter().all(|&v| v.abs() < 1e-15));
            assert!(x.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(build_scheduler_input(&s, 1.7).0[0], 1.0);
    }

    #[test]
    fn zero_projection_emits_alpha() {
        let p = init_scheduler(&RngStream::new(3));
        let x = SchedulerInput([0.3; SCHEDULER_INPUT]);
        let out = scheduler_step(&p, 1.0, SchedulerForm::Exp, &LstmState { h: vec![0.2; 64], c: vec![0.1; 64] }, &x)
            .unwrap();
        assert_eq!(out.raw, 0.0);
        assert_eq!(out.eta, 1.0);
    }

    #[test]
    fn functional_forms() {
        assert!((SchedulerForm::Exp.eta(2f64.ln(), 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(SchedulerForm::Exp.eta(0.0, 0.7), 0.7);
        assert_eq!(SchedulerForm::Linear.eta(-1.0, 1.0), -1.0);
        assert_eq!(SchedulerForm::LinearClip.eta(-1.0, 1.0), 0.0);
        assert_eq!(SchedulerForm::LinearClip.eta(50.0, 1.0), LINEAR_CLIP_MAX);
        assert!(scheduler_variant("cosine").is_err());
        assert_eq!(scheduler_variant("linear_clip").unwrap(), SchedulerForm::LinearClip);
    }
}
