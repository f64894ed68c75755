use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lopt::{Celo, CeloParams, CeloState, Variant, RULE_PREFIX, SCHEDULER_PREFIX};
use crate::nn::init_params;
use crate::rng::RngStream;
use crate::tasks::{augment_init, loss_and_grad, sample_batch, sample_tau, TaskInstance};
use crate::tensor::ParamSet;

use super::meta_opt::{adamw_meta_step, AdamWConfig, AdamWState};
use super::pes::{chain_hash, pes_reset, pes_truncation, ParticlePair, PesConfig, Unrolled, Unroller};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageId {
    UpdateRule,
    Scheduler,
}

impl StageId {
    pub fn index(self) -> u64 {
        match self {
            StageId::UpdateRule => 0,
            StageId::Scheduler => 1,
        }
    }

    pub fn from_index(i: u64) -> Option<Self> {
        match i {
            0 => Some(StageId::UpdateRule),
            1 => Some(StageId::Scheduler),
            _ => None,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            StageId::UpdateRule => RULE_PREFIX,
            StageId::Scheduler => SCHEDULER_PREFIX,
        }
    }

    /// Inner optimizer used while this stage trains.
    pub fn variant(self) -> Variant {
        match self {
            StageId::UpdateRule => Variant::NoScheduler,
            StageId::Scheduler => Variant::Full,
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageId::UpdateRule => "rule",
            StageId::Scheduler => "scheduler",
        })
    }
}

impl FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(StageId::UpdateRule),
            "scheduler" => Ok(StageId::Scheduler),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?} (expected rule or scheduler)"))),
        }
    }
}

/// Which part of φ a stage trains, and a snapshot of the part it must not touch.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stage: StageId,
    pub frozen: ParamSet,
}

impl StagePlan {
    pub fn new(stage: StageId, params: &CeloParams) -> Self {
        let frozen = params.to_meta().select(|n| !n.starts_with(stage.prefix()));
        Self { stage, frozen }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        name.starts_with(self.stage.prefix())
    }

    pub fn trainable(&self, meta: &ParamSet) -> ParamSet {
        meta.select(|n| self.is_trainable(n))
    }
}

/// Split of a total meta-iteration budget between the two stages.
pub fn stage_budgets(total: usize, rule_fraction: f64) -> (usize, usize) {
    let rule = ((total as f64) * rule_fraction).round() as usize;
    let rule = rule.min(total);
    (rule, total - rule)
}

pub const DEFAULT_RULE_FRACTION: f64 = 0.7;

/// Episode of a Celo inner problem: augmented task and its stream.
#[derive(Clone, Debug)]
pub struct CeloEpisode {
    pub task_index: usize,
    pub task: TaskInstance,
    pub stream: RngStream,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeloTrajectory {
    pub theta: ParamSet,
    pub state: CeloState,
}

/// Unrolls Celo on tasks drawn from a meta-training suite.
pub struct CeloUnroller<'a> {
    pub suite: &'a [TaskInstance],
    pub base: &'a CeloParams,
    pub variant: Variant,
}

impl CeloUnroller<'_> {
    /// Rebuilds the episode addressed by `rng` without touching trajectories.
    pub fn episode(&self, rng: &RngStream) -> Result<CeloEpisode> {
        if self.suite.is_empty() {
            return Err(Error::InvalidArgument("meta-training suite is empty".into()));
        }
        let task_index = rng.child("task", 0).generator().below(self.suite.len());
        let tau = sample_tau(&rng.child("tau", 0));
        let task = self.suite[task_index].with_tau(tau)?;
        Ok(CeloEpisode { task_index, task, stream: rng.clone() })
    }
}

impl Unroller for CeloUnroller<'_> {
    type Episode = CeloEpisode;
    type Trajectory = CeloTrajectory;

    fn reset(&self, horizon: usize, rng: &RngStream) -> Result<(CeloEpisode, CeloTrajectory)> {
        let episode = self.episode(rng)?;
        let theta0 = init_params(episode.task.net(), &rng.child("init", 0));
        let theta = augment_init(&theta0, episode.task.tau())?;
        let state = CeloState::new(&theta, horizon)?;
        Ok((episode, CeloTrajectory { theta, state }))
    }

    fn unroll(
        &self,
        phi: &ParamSet,
        episode: &CeloEpisode,
        trajectory: &mut CeloTrajectory,
        start: usize,
        len: usize,
    ) -> Result<Unrolled> {
        let celo = Celo::new(self.base.with_meta(phi)?, self.variant);
        let mut fingerprints = Vec::with_capacity(len);
        let mut total = 0.0;
        let mut diverged = false;
        for step in start..start + len {
            let batch = sample_batch(&episode.task, &episode.stream.child("batch", step as u64));
            fingerprints.push(batch.fingerprint());
            let eval = loss_and_grad(&episode.task, &trajectory.theta, &batch)?;
            if eval.diverged {
                diverged = true;
                break;
            }
            total += eval.loss;
            let info = celo.update(&mut trajectory.theta, &eval.grads, eval.loss, &mut trajectory.state)?;
            if info.diverged {
                diverged = true;
                break;
            }
        }
        let mean_loss = (!diverged).then(|| total / len as f64).filter(|l| l.is_finite());
        Ok(Unrolled { mean_loss, batch_hash: chain_hash(fingerprints) })
    }
}

/// One line of the meta-training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub meta_iter: usize,
    pub mean_meta_loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

pub const LOG_HEADER: &str = "meta_iter,mean_meta_loss,grad_norm,clipped_flag";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.meta_iter, r.mean_meta_loss, r.grad_norm, u8::from(r.clipped)).expect("string write");
    }
    out
}

pub type CeloPair = ParticlePair<CeloEpisode, CeloTrajectory>;

/// Everything besides φ needed to continue a stage exactly where it stopped.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub stage: StageId,
    pub seed: u64,
    pub iteration: usize,
    pub adam: AdamWState,
    pub pairs: Vec<CeloPair>,
}

/// Root stream of a stage.
pub fn stage_stream(seed: u64, stage: StageId) -> RngStream {
    RngStream::new(seed).child("stage", stage.index())
}

pub fn pair_streams(seed: u64, stage: StageId, pairs: usize) -> Vec<RngStream> {
    let root = stage_stream(seed, stage);
    (0..pairs as u64).map(|i| root.child("pair", i)).collect()
}

/// A stage in progress: current φ and the state to continue from.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub plan: StagePlan,
    pub params: CeloParams,
    pub meta: MetaState,
}

impl StageRun {
    pub fn new(stage: StageId, params: CeloParams, cfg: &PesConfig, suite: &[TaskInstance], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = StagePlan::new(stage, &params);
        let trainable = plan.trainable(&params.to_meta());
        let unroller = CeloUnroller { suite, base: &params, variant: stage.variant() };
        let pairs = pair_streams(seed, stage, cfg.pairs)
            .iter()
            .map(|rng| pes_reset(&unroller, cfg, &trainable, rng, 0))
            .collect::<Result<Vec<_>>>()?;
        let adam = AdamWState::new(&trainable);
        Ok(Self { plan, params, meta: MetaState { stage, seed, iteration: 0, adam, pairs } })
    }

    /// One truncation and meta-update.
    pub fn step(&mut self, cfg: &PesConfig, adamw: &AdamWConfig, suite: &[TaskInstance]) -> Result<LogRow> {
        if self.meta.pairs.len() != cfg.pairs {
            return Err(Error::InvalidArgument(format!(
                "stage has {} pairs but the config asks for {}",
                self.meta.pairs.len(),
                cfg.pairs
            )));
        }
        let stage = self.meta.stage;
        let mut phi = self.params.to_meta();
        let trainable = self.plan.trainable(&phi);
        let rngs = pair_streams(self.meta.seed, stage, cfg.pairs);
        let iteration = self.meta.iteration;
        let outcome = {
            let unroller = CeloUnroller { suite, base: &self.params, variant: stage.variant() };
            pes_truncation(&unroller, cfg, &phi, &trainable, &mut self.meta.pairs, &rngs, iteration as u64)?
        };
        if outcome.dropped > 0 {
            log::info!("meta-iteration {iteration}: dropped {} diverged pair(s)", outcome.dropped);
        }
        let info = adamw_meta_step(adamw, &mut self.meta.adam, &mut phi, &outcome.grad)?;
        self.params = self.params.with_meta(&phi)?;
        self.meta.iteration += 1;
        Ok(LogRow { meta_iter: iteration, mean_meta_loss: outcome.mean_loss, grad_norm: info.grad_norm, clipped: info.clipped })
    }

    /// Continues until `iterations` meta-steps have been taken in total.
    pub fn run_until(
        &mut self,
        iterations: usize,
        cfg: &PesConfig,
        adamw: &AdamWConfig,
        suite: &[TaskInstance],
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<Vec<LogRow>> {
        let mut rows = Vec::with_capacity(iterations.saturating_sub(self.meta.iteration));
        while self.meta.iteration < iterations {
            let row = self.step(cfg, adamw, suite)?;
            on_row(&row);
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Runs one full stage from `params` and returns the trained weights and log.
/// Work is spread over `workers` threads; results do not depend on it.
pub fn run_stage(
    stage: StageId,
    params: &CeloParams,
    cfg: &PesConfig,
    adamw: &AdamWConfig,
    suite: &[TaskInstance],
    seed: u64,
    workers: usize,
) -> Result<(CeloParams, Vec<LogRow>)> {
    let pool = thread_pool(workers)?;
    pool.install(|| {
        let mut run = StageRun::new(stage, params.clone(), cfg, suite, seed)?;
        let rows = run.run_until(cfg.meta_iterations, cfg, adamw, suite, |_| {})?;
        Ok((run.params, rows))
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))
}

/// Mean over a window of the first and last `window` finite meta-losses.
pub fn window_means(rows: &[LogRow], window: usize) -> Option<(f64, f64)> {
    let losses: Vec<f64> = rows.iter().map(|r| r.mean_meta_loss).filter(|l| l.is_finite()).collect();
    if losses.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(losses.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn masks_partition_phi() {
        let params = CeloParams::init(&RngStream::new(0));
        let meta = params.to_meta();
        let rule = StagePlan::new(StageId::UpdateRule, &params);
        let sched = StagePlan::new(StageId::Scheduler, &params);
        for name in meta.names() {
            assert!(rule.is_trainable(name) ^ sched.is_trainable(name), "{name}");
        }
        assert_eq!(rule.frozen.numel() + sched.frozen.numel(), meta.numel());
    }

    #[test]
    fn budgets_split() {
        assert_eq!(stage_budgets(1000, DEFAULT_RULE_FRACTION), (700, 300));
        assert_eq!(stage_budgets(0, 0.7), (0, 0));
    }

    #[test]
    fn stage_names() {
        for s in [StageId::UpdateRule, StageId::Scheduler] {
            assert_eq!(s.to_string().parse::<StageId>().unwrap(), s);
            assert_eq!(StageId::from_index(s.index()), Some(s));
        }
    }

    #[test]
    fn log_has_one_row_per_iteration() {
        let rows: Vec<LogRow> = (0..3)
            .map(|i| LogRow { meta_iter: i, mean_meta_loss: 1.0, grad_norm: 0.5, clipped: false })
            .collect();
        assert_eq!(log_csv(&rows).lines().count(), 4);
    }
}
