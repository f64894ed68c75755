//! Common interface for anything that can drive an inner training loop.

use crate::error::Result;
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Global step scale for optimizers that have one.
    pub eta: Option<f64>,
    pub diverged: bool,
}

pub trait Optimizer: Send + Sync {
    /// Stable identifier used in file names and reports.
    fn id(&self) -> String;

    /// Fresh per-trajectory state for parameters shaped like `params`.
    fn start<'a>(&'a self, params: &ParamSet, horizon: usize) -> Result<Box<dyn OptimizerRun + 'a>>;
}

pub trait OptimizerRun: Send {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, loss: f64) -> Result<StepInfo>;
}
