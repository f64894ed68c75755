use crate::baselines::ema;
use crate::error::{Error, Result};
use crate::nn::LstmState;
use crate::tensor::ParamSet;

use super::{LOSS_EMA_DECAYS, MOMENTUM_DECAYS, SCHEDULER_HIDDEN, SECOND_MOMENT_DECAY};

/// Accumulators owned by one optimizee tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorAccumulators {
    pub shape: Vec<usize>,
    pub momenta: [Vec<f64>; 3],
    pub second_moment: Vec<f64>,
    /// Factored second-moment statistics, present for tensors of rank ≥ 2.
    pub factored: Option<Factored>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factored {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl TensorAccumulators {
    fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let factored = (shape.len() >= 2).then(|| Factored {
            rows: vec![0.0; shape[0]],
            cols: vec![0.0; n / shape[0]],
        });
        Self {
            shape: shape.to_vec(),
            momenta: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            second_moment: vec![0.0; n],
            factored,
        }
    }

    fn update(&mut self, g: &[f64]) {
        for (m, beta) in self.momenta.iter_mut().zip(MOMENTUM_DECAYS) {
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = ema(beta, *mi, *gi);
            }
        }
        let gamma = SECOND_MOMENT_DECAY;
        for (vi, gi) in self.second_moment.iter_mut().zip(g) {
            *vi = ema(gamma, *vi, gi * gi);
        }
        if let Some(f) = &mut self.factored {
            let cols = f.cols.len();
            let rows = f.rows.len();
            let mut row_mean = vec![0.0; rows];
            let mut col_mean = vec![0.0; cols];
            for (r, row) in g.chunks_exact(cols).enumerate() {
                for (c, gi) in row.iter().enumerate() {
                    let sq = gi * gi;
                    row_mean[r] += sq;
                    col_mean[c] += sq;
                }
            }
            for (acc, s) in f.rows.iter_mut().zip(row_mean) {
                *acc = gamma * *acc + (1.0 - gamma) * (s / cols as f64);
            }
            for (acc, s) in f.cols.iter_mut().zip(col_mean) {
                *acc = gamma * *acc + (1.0 - gamma) * (s / rows as f64);
            }
        }
    }
}

/// Learned-optimizer state carried along one inner trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct CeloState {
    pub step: usize,
    pub horizon: usize,
    pub tensors: Vec<TensorAccumulators>,
    pub loss_emas: [f64; 4],
    pub initial_loss: Option<f64>,
    pub lstm: LstmState,
    pub diverged: bool,
}

impl CeloState {
    /// Zero state for parameters shaped like `params` and a declared horizon.
    pub fn new(params: &ParamSet, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            step: 0,
            horizon,
            tensors: params.tensors().map(|t| TensorAccumulators::zeros(t.shape())).collect(),
            loss_emas: [0.0; 4],
            initial_loss: None,
            lstm: LstmState::zeros(SCHEDULER_HIDDEN),
            diverged: false,
        })
    }

    /// Folds one gradient and loss into the accumulators and advances `step`.
    ///
    /// Non-finite inputs leave the accumulators untouched and set `diverged`.
    pub fn update_accumulators(&mut self, grads: &ParamSet, loss: f64) -> Result<()> {
        if grads.len() != self.tensors.len()
            || grads.tensors().zip(&self.tensors).any(|(g, acc)| g.shape() != acc.shape.as_slice())
        {
            return Err(Error::Shape("gradients do not match optimizer state".into()));
        }
        if !loss.is_finite() || !grads.all_finite() {
            self.diverged = true;
            return Ok(());
        }
        for (acc, g) in self.tensors.iter_mut().zip(grads.tensors()) {
            acc.update(g.data());
        }
        let l0 = *self.initial_loss.get_or_insert(loss);
        if self.step == 0 {
            self.loss_emas = [l0; 4];
        }
        for (ema, delta) in self.loss_emas.iter_mut().zip(LOSS_EMA_DECAYS) {
            *ema = delta * *ema + (1.0 - delta) * loss;
        }
        self.step += 1;
        Ok(())
    }
}
