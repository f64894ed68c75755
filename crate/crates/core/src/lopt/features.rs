//! Per-parameter input features for the learned update rule.
//!
//! Columns, in order:
//!
//! | index | feature |
//! |-------|---------|
//! | 0     | gradient `g` |
//! | 1..=3 | momenta at β ∈ {0.9, 0.99, 0.999} |
//! | 4     | second moment `v` |
//! | 5     | `1/√(v+ε)` |
//! | 6     | factored second moment `rᵢ·cⱼ / mean(r)` (falls back to `v` for vectors) |
//! | 7     | parameter value `p` |
//! | 8..=10| `m_β / √(v+ε)` |
//! | 11..  | `tanh(t/k)` time embeddings, shared by every row |
//!
//! Columns 0..=10 are rescaled to unit second moment over the tensor; constant
//! columns (including all-zero ones) become zero.

use crate::error::{Error, Result};

use super::state::{CeloState, TensorAccumulators};
use super::{FEATURE_TIMESCALES, PER_PARAM_FEATURES, RULE_INPUT};

const EPS: f64 = 1e-8;

/// Row-major `[numel × RULE_INPUT]` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub const COLS: usize = RULE_INPUT;

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.chunks_exact(Self::COLS).map(|r| r[c]).collect()
    }
}

/// Scales `col` to unit second moment. Constant columns are zeroed.
pub(crate) fn normalize_column(col: &mut [f64]) {
    let first = col[0];
    if col.iter().all(|&v| v == first) {
        col.fill(0.0);
        return;
    }
    // Pre-scaling by the max magnitude keeps the squares from underflowing.
    let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ms = col.iter().map(|v| (v / scale).powi(2)).sum::<f64>() / col.len() as f64;
    let inv = 1.0 / (scale * ms.sqrt());
    for v in col.iter_mut() {
        *v *= inv;
    }
}

pub fn time_embeddings(step: usize) -> [f64; FEATURE_TIMESCALES.len()] {
    FEATURE_TIMESCALES.map(|k| (step as f64 / k).tanh())
}

fn raw_columns(acc: &TensorAccumulators, p: &[f64], g: &[f64]) -> Vec<Vec<f64>> {
    let v = &acc.second_moment;
    let rsqrt: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + EPS).sqrt()).collect();
    let factored: Vec<f64> = match &acc.factored {
        Some(f) => {
            let mean_r = f.rows.iter().sum::<f64>() / f.rows.len() as f64;
            let denom = mean_r.max(EPS);
            let cols = f.cols.len();
            (0..p.len()).map(|i| f.rows[i / cols] * f.cols[i % cols] / denom).collect()
        }
        None => v.clone(),
    };
    let mut cols = Vec::with_capacity(PER_PARAM_FEATURES);
    cols.push(g.to_vec());
    cols.extend(acc.momenta.iter().cloned());
    cols.push(v.clone());
    cols.push(rsqrt.clone());
    cols.push(factored);
    cols.push(p.to_vec());
    for m in &acc.momenta {
        cols.push(m.iter().zip(&rsqrt).map(|(mi, r)| mi * r).collect());
    }
    debug_assert_eq!(cols.len(), PER_PARAM_FEATURES);
    cols
}

/// Features for tensor `index` of the optimizee, using the accumulators already
/// updated for the current step.
pub fn per_param_features(state: &CeloState, index: usize, p: &[f64], g: &[f64]) -> Result<FeatureMatrix> {
    let acc = state
        .tensors
        .get(index)
        .ok_or_else(|| Error::Shape(format!("no accumulators for tensor {index}")))?;
    let n = acc.second_moment.len();
    if p.len() != n || g.len() != n {
        return Err(Error::Shape(format!(
            "tensor {index}: expected {n} values, got p={} g={}",
            p.len(),
            g.len()
        )));
    }
    let mut cols = raw_columns(acc, p, g);
    for c in &mut cols {
        normalize_column(c);
    }
    let time = time_embeddings(state.step);
    let mut data = Vec::with_capacity(n * RULE_INPUT);
    for i in 0..n {
        data.extend(cols.iter().map(|c| c[i]));
        data.extend_from_slice(&time);
    }
    Ok(FeatureMatrix { rows: n, data })
}
