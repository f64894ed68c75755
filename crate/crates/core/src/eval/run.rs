use crate::error::{Error, Result};
use crate::nn::init_params;
use crate::optim::Optimizer;
use crate::rng::RngStream;
use crate::tasks::{augment_init, loss_and_grad, sample_batch, TaskInstance};

use super::record::RunRecord;

/// Default inner-training horizon.
pub const DEFAULT_STEPS: usize = 2000;

/// Trains a fresh optimizee for `steps` updates and records every loss.
///
/// Parameters are drawn from `seed/init` and divided by the task's τ; the
/// batch for step `t` comes from `seed/batch[t]`, so any two optimizers run
/// with the same seed see the same initialization and the same data.
pub fn run_training(optimizer: &dyn Optimizer, task: &TaskInstance, steps: usize, seed: u64) -> Result<RunRecord> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let root = RngStream::new(seed);
    let theta0 = init_params(task.net(), &root.child("init", 0));
    let mut theta = augment_init(&theta0, task.tau())?;
    let mut run = optimizer.start(&theta, steps)?;
    let mut losses = Vec::with_capacity(steps);
    let mut etas: Vec<f64> = Vec::with_capacity(steps);
    let mut has_eta = false;
    for t in 0..steps {
        let batch = sample_batch(task, &root.child("batch", t as u64));
        let eval = loss_and_grad(task, &theta, &batch)?;
        if eval.diverged {
            log::debug!("{} diverged on {} at step {t}", optimizer.id(), task.id());
            break;
        }
        losses.push(eval.loss);
        let info = run.step(&mut theta, &eval.grads, eval.loss)?;
        if let Some(eta) = info.eta {
            has_eta = true;
            etas.push(eta);
        } else {
            etas.push(f64::NAN);
        }
        if info.diverged {
            log::debug!("{} produced non-finite parameters on {} at step {t}", optimizer.id(), task.id());
            break;
        }
    }
    let diverged = losses.len() < steps;
    losses.resize(steps, f64::INFINITY);
    let mut record = RunRecord::from_losses(task.id(), optimizer.id(), seed, losses, has_eta.then_some(etas));
    record.diverged |= diverged;
    Ok(record)
}
