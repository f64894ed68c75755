use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{ParamSet, Tensor};

pub const W_INPUT: &str = "lstm.w_ih";
pub const W_HIDDEN: &str = "lstm.w_hh";
pub const BIAS: &str = "lstm.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Gate blocks are laid out `[input, forget, candidate, output]` along the last axis.
pub fn init_lstm(spec: LstmSpec, rng: &RngStream) -> ParamSet {
    let four_h = 4 * spec.hidden;
    let std = 1.0 / ((spec.input + spec.hidden) as f64).sqrt();
    let mut p = ParamSet::new();
    let w_ih = rng.child("w_ih", 0).generator().normals(spec.input * four_h, std);
    let w_hh = rng.child("w_hh", 0).generator().normals(spec.hidden * four_h, std);
    p.insert(W_INPUT, Tensor::new(vec![spec.input, four_h], w_ih).expect("extents")).expect("unique");
    p.insert(W_HIDDEN, Tensor::new(vec![spec.hidden, four_h], w_hh).expect("extents")).expect("unique");
    p.insert(BIAS, Tensor::zeros(&[four_h])).expect("unique");
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One step of the standard LSTM recurrence. Returns the new state; the
/// cell output is the new hidden vector.
pub fn lstm_step(spec: LstmSpec, params: &ParamSet, state: &LstmState, input: &[f64]) -> Result<LstmState> {
    let four_h = 4 * spec.hidden;
    let w_ih = params.expect(W_INPUT)?;
    let w_hh = params.expect(W_HIDDEN)?;
    let bias = params.expect(BIAS)?;
    if input.len() != spec.input {
        return Err(Error::Shape(format!("lstm input width {} != {}", input.len(), spec.input)));
    }
    if w_ih.shape() != [spec.input, four_h]
        || w_hh.shape() != [spec.hidden, four_h]
        || bias.shape() != [four_h]
        || state.h.len() != spec.hidden
        || state.c.len() != spec.hidden
    {
        return Err(Error::Shape("lstm parameters or state do not match spec".into()));
    }
    let mut gates = bias.data().to_vec();
    for (x, row) in input.iter().zip(w_ih.data().chunks_exact(four_h)) {
        for (g, w) in gates.iter_mut().zip(row) {
            *g += x * w;
        }
    }
    for (h, row) in state.h.iter().zip(w_hh.data().chunks_exact(four_h)) {
        for (g, w) in gates.iter_mut().zip(row) {
            *g += h * w;
        }
    }
    let hs = spec.hidden;
    let mut next = LstmState::zeros(hs);
    for j in 0..hs {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hs + j]);
        let g = gates[2 * hs + j].tanh();
        let o = sigmoid(gates[3 * hs + j]);
        let c = f * state.c[j] + i * g;
        next.c[j] = c;
        next.h[j] = o * c.tanh();
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(spec: LstmSpec) -> ParamSet {
        init_lstm(spec, &RngStream::new(0)).zeros_like()
    }

    #[test]
    fn zero_everything_stays_zero() {
        let spec = LstmSpec { input: 3, hidden: 4 };
        let next = lstm_step(spec, &zero_params(spec), &LstmState::zeros(4), &[0.0; 3]).unwrap();
        assert!(next.h.iter().chain(&next.c).all(|&v| v == 0.0));
    }

    #[test]
    fn unit_cell_with_half_gates() {
        let spec = LstmSpec { input: 2, hidden: 3 };
        let state = LstmState { h: vec![0.0; 3], c: vec![1.0; 3] };
        let next = lstm_step(spec, &zero_params(spec), &state, &[0.4, -0.2]).unwrap();
        for j in 0..3 {
            assert!((next.c[j] - 0.5).abs() < 1e-15);
            assert!((next.h[j] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_is_pure() {
        let spec = LstmSpec { input: 5, hidden: 8 };
        let p = init_lstm(spec, &RngStream::new(11));
        let state = LstmState { h: vec![0.1; 8], c: vec![-0.3; 8] };
        let x = [0.5, -1.0, 0.25, 2.0, 0.0];
        let a = lstm_step(spec, &p, &state, &x).unwrap();
        let b = lstm_step(spec, &p, &state, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_width_errors() {
        let spec = LstmSpec { input: 2, hidden: 2 };
        let p = zero_params(spec);
        assert!(lstm_step(spec, &p, &LstmState::zeros(2), &[0.0; 3]).is_err());
    }
}
