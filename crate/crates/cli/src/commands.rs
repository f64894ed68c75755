use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use celo::baselines::{best_trial, half_power_sweep, SweepTrial};
use celo::eval::{
    final_loss, line_chart, loss_scores, parse_record_file_name, report_csv, run_training, scores_csv, smooth,
    speedup_scores, summary_table, Criterion, MetricReport, RunRecord, Series, TaskRuns, SMOOTHING,
};
use celo::lopt::CeloParams;
use celo::metatrain::{
    checkpoint_save, load_params, log_csv, resume_stage, save_params, thread_pool, LogRow, StageId, StageRun,
};
use celo::tasks::{make_meta_train_suite, TaskInstance};
use celo::{Error, RngStream};

use crate::config::{Config, ConfigError};
use crate::optimizers::{OptimizerSpec, ADAM_BEST};

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::Io(e))
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

/// Directory layout under `io.output_dir`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn stage_checkpoint(&self, stage: StageId) -> PathBuf {
        self.checkpoints().join(format!("stage_{stage}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("celo.ckpt")
    }

    pub fn stage_log(&self, stage: StageId) -> PathBuf {
        self.root.join("logs").join(format!("meta_{stage}.csv"))
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn sweep_task(&self, task: &str) -> PathBuf {
        self.sweep().join(task)
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn score(&self) -> PathBuf {
        self.root.join("score")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

pub const BEST_FILE: &str = "best.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageChoice {
    Rule,
    Scheduler,
    Both,
}

fn build_suite(configs: &[celo::tasks::TaskConfig]) -> Result<Vec<TaskInstance>, CliError> {
    make_meta_train_suite(configs).map_err(|e| config_error(format!("cannot build tasks: {e}")))
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<(), CliError> {
    fs::create_dir_all(path.parent().expect("log dir"))?;
    fs::write(path, log_csv(rows))?;
    Ok(())
}

fn read_log(path: &Path, upto: usize) -> Result<Vec<LogRow>, CliError> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            Some(LogRow {
                meta_iter: f.first()?.parse().ok()?,
                mean_meta_loss: f.get(1)?.parse().ok()?,
                grad_norm: f.get(2)?.parse().ok()?,
                clipped: f.get(3)? == &"1",
            })
        })();
        match parsed {
            Some(r) if r.meta_iter < upto => rows.push(r),
            Some(_) => {}
            None => return Err(CliError::Runtime(Error::Record(format!("bad log line {line:?} in {}", path.display())))),
        }
    }
    Ok(rows)
}

fn run_one_stage(
    config: &Config,
    layout: &Layout,
    stage: StageId,
    start: CeloParams,
    iterations: usize,
    suite: &[TaskInstance],
    resume: bool,
) -> Result<CeloParams, CliError> {
    let m = &config.metatrain;
    let pes = m.pes(iterations);
    let adamw = m.adamw();
    let ckpt = layout.stage_checkpoint(stage);
    let log_path = layout.stage_log(stage);
    let mut run = if resume && ckpt.is_file() {
        let run = resume_stage(&ckpt, suite)?;
        if run.meta.stage != stage || run.meta.seed != config.seed {
            return Err(config_error(format!("{} belongs to a different stage or seed", ckpt.display())));
        }
        log::info!("resuming stage {stage} at meta-iteration {}", run.meta.iteration);
        run
    } else {
        StageRun::new(stage, start, &pes, suite, config.seed)?
    };
    let mut rows = if resume { read_log(&log_path, run.meta.iteration)? } else { Vec::new() };
    fs::create_dir_all(layout.checkpoints())?;
    while run.meta.iteration < iterations {
        let target = (run.meta.iteration + m.checkpoint_every).min(iterations);
        let chunk = run.run_until(target, &pes, &adamw, suite, |r| {
            log::debug!("{stage} {} loss {:.5} |g| {:.3e}", r.meta_iter, r.mean_meta_loss, r.grad_norm);
        })?;
        rows.extend(chunk);
        checkpoint_save(&run.params, &run.meta, &ckpt)?;
        write_log(&log_path, &rows)?;
        if let Some(last) = rows.last() {
            log::info!("stage {stage}: meta-iteration {} / {iterations}, meta-loss {:.4}", last.meta_iter + 1, last.mean_meta_loss);
        }
    }
    checkpoint_save(&run.params, &run.meta, &ckpt)?;
    write_log(&log_path, &rows)?;
    Ok(run.params)
}

pub fn meta_train(config: &Config, stage: StageChoice, resume: bool) -> Result<(), CliError> {
    config.validate()?;
    let layout = Layout::new(&config.io.output_dir);
    let suite = build_suite(&config.meta_train_configs()?)?;
    let (rule_iters, sched_iters) = config.metatrain.budgets();
    let rule_ckpt = layout.stage_checkpoint(StageId::UpdateRule);
    if stage == StageChoice::Scheduler && !rule_ckpt.is_file() {
        return Err(config_error(format!(
            "stage scheduler needs the stage-1 checkpoint {}; run --stage rule first",
            rule_ckpt.display()
        )));
    }
    let pool = thread_pool(config.workers)?;
    pool.install(|| -> Result<(), CliError> {
        let init = CeloParams::init(&RngStream::new(config.seed).child("celo_init", 0));
        let after_rule = match stage {
            StageChoice::Scheduler => load_params(&rule_ckpt)?,
            _ => run_one_stage(config, &layout, StageId::UpdateRule, init, rule_iters, &suite, resume)?,
        };
        let last = match stage {
            StageChoice::Rule => after_rule,
            _ => run_one_stage(config, &layout, StageId::Scheduler, after_rule, sched_iters, &suite, resume)?,
        };
        save_params(&last, &layout.final_checkpoint())?;
        Ok(())
    })
}

/// Sweep trials run with the first evaluation seed.
pub fn sweep_adam(config: &Config) -> Result<(), CliError> {
    config.validate()?;
    let layout = Layout::new(&config.io.output_dir);
    let tasks = build_suite(&config.eval_configs()?)?;
    let sweep = half_power_sweep(config.eval.sweep_lo, config.eval.sweep_hi)?;
    let sweep_seed = config.eval.seeds[0];
    let pool = thread_pool(config.workers)?;
    let jobs: Vec<(usize, f64)> =
        (0..tasks.len()).flat_map(|t| sweep.lrs().iter().map(move |&lr| (t, lr))).collect();
    let records: Vec<celo::Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(t, lr)| {
                let opt = OptimizerSpec::Adam(lr).build(None, None)?;
                run_training(opt.as_ref(), &tasks[t], config.eval.steps, sweep_seed)
            })
            .collect()
    });
    let mut by_task: Vec<Vec<SweepTrial>> = vec![Vec::new(); tasks.len()];
    for ((t, lr), rec) in jobs.iter().zip(records) {
        by_task[*t].push(SweepTrial { lr: *lr, record: rec? });
    }
    let mut failure = None;
    for (task, trials) in tasks.iter().zip(&by_task) {
        let dir = layout.sweep_task(task.id());
        fs::create_dir_all(&dir)?;
        for trial in trials {
            trial.record.save(&dir)?;
        }
        match best_trial(trials) {
            Ok(i) => {
                let t = &trials[i];
                fs::write(dir.join(BEST_FILE), format!("index,lr,file\n{i},{:e},{}\n", t.lr, t.record.file_name()))?;
                log::info!("{}: best Adam lr {:e}, final loss {:.5}", task.id(), t.lr, final_loss(&t.record));
            }
            Err(e) => {
                let _ = fs::remove_file(dir.join(BEST_FILE));
                failure.get_or_insert(e);
            }
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

/// Best sweep trial of one task: learning rate and its record.
pub fn load_best(layout: &Layout, task: &str) -> Result<(f64, RunRecord), CliError> {
    let dir = layout.sweep_task(task);
    let best = dir.join(BEST_FILE);
    let text = fs::read_to_string(&best)
        .map_err(|_| config_error(format!("no sweep result for task {task:?} at {}; run sweep-adam first", best.display())))?;
    let line = text.lines().nth(1).unwrap_or_default();
    let fields: Vec<&str> = line.split(',').collect();
    let parsed = match fields.as_slice() {
        [_, lr, file] => lr.parse::<f64>().ok().map(|lr| (lr, dir.join(file))),
        _ => None,
    };
    let (lr, file) = parsed.ok_or_else(|| CliError::Runtime(Error::Record(format!("malformed {}", best.display()))))?;
    Ok((lr, RunRecord::load(&file)?))
}

fn checkpoint_path(config: &Config, layout: &Layout) -> PathBuf {
    config.io.checkpoint.clone().unwrap_or_else(|| layout.final_checkpoint())
}

pub fn evaluate(config: &Config) -> Result<(), CliError> {
    config.validate()?;
    let layout = Layout::new(&config.io.output_dir);
    let specs = config.optimizer_specs()?;
    let tasks = build_suite(&config.eval_configs()?)?;
    let celo_params = if specs.iter().any(OptimizerSpec::needs_checkpoint) {
        let path = checkpoint_path(config, &layout);
        if !path.is_file() {
            return Err(config_error(format!(
                "Celo evaluation needs a checkpoint; {} does not exist (set io.checkpoint or run meta-train)",
                path.display()
            )));
        }
        Some(load_params(&path).map_err(|e| match e {
            Error::Checkpoint(c) => config_error(format!("{}: {c}", path.display())),
            other => CliError::Runtime(other),
        })?)
    } else {
        None
    };
    let mut best_lrs = BTreeMap::new();
    if specs.contains(&OptimizerSpec::AdamBest) {
        for t in &tasks {
            best_lrs.insert(t.id().to_string(), load_best(&layout, t.id())?.0);
        }
    }
    let mut jobs = Vec::new();
    for (ti, _) in tasks.iter().enumerate() {
        for (si, _) in specs.iter().enumerate() {
            for &seed in &config.eval.seeds {
                jobs.push((ti, si, seed));
            }
        }
    }
    let pool = thread_pool(config.workers)?;
    let records: Vec<celo::Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ti, si, seed)| {
                let task = &tasks[ti];
                let spec = &specs[si];
                let opt = spec.build(celo_params.as_ref(), best_lrs.get(task.id()).copied())?;
                let mut rec = run_training(opt.as_ref(), task, config.eval.steps, seed)?;
                rec.optimizer_id = spec.label();
                Ok(rec)
            })
            .collect()
    });
    let records = records.into_iter().collect::<celo::Result<Vec<_>>>()?;
    fs::create_dir_all(layout.eval())?;
    for r in &records {
        r.save(&layout.eval())?;
    }
    Ok(())
}

/// Every evaluation record, keyed by optimizer and then task.
fn load_eval_records(layout: &Layout) -> Result<BTreeMap<String, BTreeMap<String, Vec<RunRecord>>>, CliError> {
    let dir = layout.eval();
    let entries = fs::read_dir(&dir)
        .map_err(|_| config_error(format!("no evaluation records at {}; run evaluate first", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).and_then(parse_record_file_name).is_some())
        .collect();
    paths.sort();
    let mut out: BTreeMap<String, BTreeMap<String, Vec<RunRecord>>> = BTreeMap::new();
    for p in paths {
        let r = RunRecord::load(&p)?;
        out.entry(r.optimizer_id.clone()).or_default().entry(r.task_id.clone()).or_default().push(r);
    }
    for tasks in out.values_mut() {
        for runs in tasks.values_mut() {
            runs.sort_by_key(|r| r.seed);
        }
    }
    Ok(out)
}

pub fn score(config: &Config) -> Result<(), CliError> {
    config.validate()?;
    let layout = Layout::new(&config.io.output_dir);
    let criteria = config.criteria()?;
    if !layout.sweep().is_dir() {
        return Err(config_error(format!("baseline directory {} does not exist; run sweep-adam first", layout.sweep().display())));
    }
    let task_ids: Vec<String> = config.eval_configs()?.into_iter().map(|c| c.name).collect();
    let mut baselines = BTreeMap::new();
    for t in &task_ids {
        baselines.insert(t.clone(), load_best(&layout, t)?.1);
    }
    let records = load_eval_records(&layout)?;
    let mut reports = Vec::new();
    let mut matrices = Vec::new();
    for (opt, by_task) in &records {
        let runs: Vec<TaskRuns> = task_ids
            .iter()
            .filter_map(|t| by_task.get(t).map(|runs| TaskRuns { task_id: t.clone(), runs: runs.clone() }))
            .collect();
        if runs.is_empty() {
            continue;
        }
        for &c in &criteria {
            let m = match c {
                Criterion::FinalLoss => loss_scores(opt, &runs, &baselines)?,
                Criterion::Speedup => speedup_scores(opt, &runs, &baselines)?,
            };
            reports.push(MetricReport::from_scores(c, &m)?);
            matrices.push((c, m));
        }
    }
    let dir = layout.score();
    fs::create_dir_all(dir.join("plots"))?;
    fs::write(dir.join("report.csv"), report_csv(&reports))?;
    fs::write(dir.join("scores.csv"), scores_csv(&matrices))?;
    let table = summary_table(&reports);
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    write_plots(&dir.join("plots"), &task_ids, &records, Some(&baselines))?;
    Ok(())
}

fn write_plots(
    dir: &Path,
    task_ids: &[String],
    records: &BTreeMap<String, BTreeMap<String, Vec<RunRecord>>>,
    baselines: Option<&BTreeMap<String, RunRecord>>,
) -> Result<(), CliError> {
    for task in task_ids {
        let mut losses = Vec::new();
        let mut etas = Vec::new();
        if let Some(b) = baselines.and_then(|b| b.get(task)) {
            losses.push(Series { label: format!("{ADAM_BEST} (sweep)"), values: smooth(&b.losses, SMOOTHING) });
        }
        for (opt, by_task) in records {
            let Some(run) = by_task.get(task).and_then(|runs| runs.first()) else {
                continue;
            };
            losses.push(Series { label: format!("{opt} seed {}", run.seed), values: smooth(&run.losses, SMOOTHING) });
            if let Some(e) = &run.etas {
                etas.push(Series { label: format!("{opt} seed {}", run.seed), values: e.clone() });
            }
        }
        if !losses.is_empty() {
            fs::write(dir.join(format!("{task}_loss.svg")), line_chart(&format!("{task}: smoothed training loss"), &losses, true))?;
        }
        if !etas.is_empty() {
            fs::write(dir.join(format!("{task}_eta.svg")), line_chart(&format!("{task}: step-size scale"), &etas, false))?;
        }
    }
    Ok(())
}

pub fn plot(config: &Config) -> Result<(), CliError> {
    config.validate()?;
    let layout = Layout::new(&config.io.output_dir);
    let task_ids: Vec<String> = config.eval_configs()?.into_iter().map(|c| c.name).collect();
    let records = load_eval_records(&layout)?;
    fs::create_dir_all(layout.plots())?;
    write_plots(&layout.plots(), &task_ids, &records, None)?;
    for stage in [StageId::UpdateRule, StageId::Scheduler] {
        let path = layout.stage_log(stage);
        if path.is_file() {
            let rows = read_log(&path, usize::MAX)?;
            let s = Series { label: format!("stage {stage}"), values: rows.iter().map(|r| r.mean_meta_loss).collect() };
            fs::write(layout.plots().join(format!("meta_{stage}.svg")), line_chart(&format!("meta-loss, stage {stage}"), &[s], true))?;
        }
    }
    Ok(())
}
