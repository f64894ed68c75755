//! Celo: a compute-efficient learned optimizer.
//!
//! A per-parameter MLP proposes update directions and magnitudes from
//! momentum, second-moment and factored statistics; an LSTM scheduler scales
//! every update by a learned global step size. Both are meta-trained with
//! persistent evolution strategies on parameter-scale-augmented tasks, and
//! evaluated by Adam-normalized scores (final loss and speedup) aggregated
//! with IQM, median and optimality gap.

pub mod baselines;
pub mod error;
pub mod eval;
mod linalg;
pub mod lopt;
pub mod metatrain;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use optim::{Optimizer, OptimizerRun, StepInfo};
pub use rng::{RngStream, StreamRng};
pub use tensor::{ParamSet, Tensor};
