//! Curve smoothing, Adam-normalized scores and their aggregates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::record::RunRecord;
use crate::error::{Error, Result};

pub const SMOOTHING: f64 = 0.9;
/// Number of trailing smoothed losses averaged into the final loss.
pub const FINAL_WINDOW: usize = 10;
const RATIO_EPS: f64 = 1e-12;

/// Exponential moving average seeded with the first value.
pub fn smooth(curve: &[f64], c: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(curve.len());
    let mut acc = match curve.first() {
        Some(&x) => x,
        None => return out,
    };
    out.push(acc);
    for &x in &curve[1..] {
        acc = c * acc + (1.0 - c) * x;
        out.push(acc);
    }
    out
}

/// Mean of the last ten smoothed losses; `+∞` for diverged or too-short runs.
pub fn final_loss(record: &RunRecord) -> f64 {
    if record.diverged || record.losses.len() < FINAL_WINDOW {
        return f64::INFINITY;
    }
    let s = smooth(&record.losses, SMOOTHING);
    let tail = &s[s.len() - FINAL_WINDOW..];
    let mean = tail.iter().sum::<f64>() / FINAL_WINDOW as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Criterion {
    FinalLoss,
    Speedup,
}

impl Criterion {
    pub const ALL: [Criterion; 2] = [Criterion::FinalLoss, Criterion::Speedup];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::FinalLoss => "final_loss",
            Criterion::Speedup => "speedup",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_loss" => Ok(Criterion::FinalLoss),
            "speedup" => Ok(Criterion::Speedup),
            other => Err(Error::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

/// `L_adam / L_opt`; zero for a diverged run.
pub fn loss_score(baseline: &RunRecord, run: &RunRecord) -> Result<f64> {
    let target = final_loss(baseline);
    if !target.is_finite() {
        return Err(Error::NoValidBaseline(format!("baseline for {:?} diverged", baseline.task_id)));
    }
    let fl = final_loss(run);
    Ok(if fl.is_finite() { target / fl.max(RATIO_EPS) } else { 0.0 })
}

/// `T / T_opt` where `T_opt` is the first (1-based) step whose smoothed loss
/// reaches the baseline's final loss; zero if it never does.
pub fn speedup_score(baseline: &RunRecord, run: &RunRecord) -> Result<f64> {
    let target = final_loss(baseline);
    if !target.is_finite() {
        return Err(Error::NoValidBaseline(format!("baseline for {:?} diverged", baseline.task_id)));
    }
    if run.diverged {
        return Ok(0.0);
    }
    let horizon = baseline.steps() as f64;
    Ok(smooth(&run.losses, SMOOTHING)
        .iter()
        .position(|&l| l <= target)
        .map_or(0.0, |i| horizon / (i + 1) as f64))
}

/// Normalized scores for one optimizer: rows are tasks, columns trials.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub optimizer_id: String,
    pub task_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(optimizer_id: impl Into<String>, task_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if task_ids.len() != scores.len() {
            return Err(Error::Shape(format!("{} task ids for {} score rows", task_ids.len(), scores.len())));
        }
        if scores.iter().flatten().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("scores must be finite and nonnegative".into()));
        }
        Ok(Self { optimizer_id: optimizer_id.into(), task_ids, scores })
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.scores.iter().flatten().copied().collect()
    }

    pub fn task_means(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|row| if row.is_empty() { 0.0 } else { row.iter().sum::<f64>() / row.len() as f64 })
            .collect()
    }
}

/// Runs of one optimizer on one task.
#[derive(Clone, Debug)]
pub struct TaskRuns {
    pub task_id: String,
    pub runs: Vec<RunRecord>,
}

fn score_matrix(
    optimizer_id: &str,
    runs: &[TaskRuns],
    baselines: &BTreeMap<String, RunRecord>,
    score: impl Fn(&RunRecord, &RunRecord) -> Result<f64>,
) -> Result<ScoreMatrix> {
    let mut task_ids = Vec::with_capacity(runs.len());
    let mut rows = Vec::with_capacity(runs.len());
    for task in runs {
        let baseline = baselines
            .get(&task.task_id)
            .ok_or_else(|| Error::NoValidBaseline(format!("no baseline for task {:?}", task.task_id)))?;
        rows.push(task.runs.iter().map(|r| score(baseline, r)).collect::<Result<Vec<_>>>()?);
        task_ids.push(task.task_id.clone());
    }
    ScoreMatrix::new(optimizer_id, task_ids, rows)
}

pub fn loss_scores(optimizer_id: &str, runs: &[TaskRuns], baselines: &BTreeMap<String, RunRecord>) -> Result<ScoreMatrix> {
    score_matrix(optimizer_id, runs, baselines, loss_score)
}

pub fn speedup_scores(optimizer_id: &str, runs: &[TaskRuns], baselines: &BTreeMap<String, RunRecord>) -> Result<ScoreMatrix> {
    score_matrix(optimizer_id, runs, baselines, speedup_score)
}

/// Mean of the pooled scores after dropping ⌊n/4⌋ from each end.
pub fn iqm_of(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::TooFewEntries { needed: 4, got: values.len() });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let trim = values.len() / 4;
    let kept = &sorted[trim..sorted.len() - trim];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn iqm(s: &ScoreMatrix) -> Result<f64> {
    iqm_of(&s.pooled())
}

/// `1 − mean(min(s, 1))` over pooled scores.
pub fn optimality_gap_of(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TooFewEntries { needed: 1, got: 0 });
    }
    Ok(1.0 - values.iter().map(|s| s.min(1.0)).sum::<f64>() / values.len() as f64)
}

pub fn optimality_gap(s: &ScoreMatrix) -> Result<f64> {
    optimality_gap_of(&s.pooled())
}

pub fn median_of(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TooFewEntries { needed: 1, got: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) })
}

/// Median of per-task mean scores.
pub fn median_score(s: &ScoreMatrix) -> Result<f64> {
    median_of(&s.task_means())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub optimizer_id: String,
    pub criterion: Criterion,
    pub iqm: f64,
    pub median: f64,
    pub optimality_gap: f64,
    pub task_means: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn from_scores(criterion: Criterion, s: &ScoreMatrix) -> Result<Self> {
        Ok(Self {
            optimizer_id: s.optimizer_id.clone(),
            criterion,
            iqm: iqm(s)?,
            median: median_score(s)?,
            optimality_gap: optimality_gap(s)?,
            task_means: s.task_ids.iter().cloned().zip(s.task_means()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(losses: Vec<f64>) -> RunRecord {
        RunRecord::from_losses("t", "o", 0, losses, None)
    }

    #[test]
    fn smoothing_recurrence() {
        assert_eq!(smooth(&[3.0; 5], 0.9), [3.0; 5]);
        let s = smooth(&[0.0, 1.0], 0.9);
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.1).abs() < 1e-15);
        assert!(smooth(&[], 0.9).is_empty());
    }

    #[test]
    fn final_loss_of_flat_tail() {
        assert_eq!(final_loss(&record(vec![2.0; 15])), 2.0);
        assert_eq!(final_loss(&record(vec![2.0, f64::INFINITY, f64::INFINITY])), f64::INFINITY);
        assert_eq!(final_loss(&record(vec![2.0; 5])), f64::INFINITY);
    }

    #[test]
    fn loss_score_cases() {
        let adam = record(vec![2.0; 20]);
        assert!((loss_score(&adam, &record(vec![1.6; 20])).unwrap() - 1.25).abs() < 1e-15);
        assert_eq!(loss_score(&adam, &adam).unwrap(), 1.0);
        assert_eq!(loss_score(&adam, &record(vec![1.0, f64::NAN])).unwrap(), 0.0);
        assert!(matches!(loss_score(&record(vec![f64::INFINITY; 20]), &adam), Err(Error::NoValidBaseline(_))));
    }

    #[test]
    fn speedup_cases() {
        let adam = record(vec![1.0; 2000]);
        // Smoothed value is 2.0 through index 498 and 0.9·2 + 0.1·(−20) < 1 at index 499.
        let mut fast = vec![2.0; 2000];
        fast[499] = -20.0;
        assert_eq!(speedup_score(&adam, &record(fast)).unwrap(), 4.0);
        assert_eq!(speedup_score(&adam, &record(vec![2.0; 2000])).unwrap(), 0.0);
        assert!(speedup_score(&adam, &adam).unwrap() >= 1.0);
    }

    #[test]
    fn aggregates_on_worked_examples() {
        assert!((iqm_of(&[0.5, 1.0, 1.1, 1.2]).unwrap() - 1.05).abs() < 1e-15);
        assert_eq!(iqm_of(&[1.0; 12]).unwrap(), 1.0);
        assert!(iqm_of(&[1.0; 3]).is_err());
        assert!((optimality_gap_of(&[1.2, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(optimality_gap_of(&[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(median_of(&[0.8, 1.3, 1.0]).unwrap(), 1.0);
        assert_eq!(median_of(&[1.0, 2.0]).unwrap(), 1.5);
    }

    #[test]
    fn score_matrix_rejects_negative_entries() {
        assert!(ScoreMatrix::new("o", vec!["t".into()], vec![vec![-1.0]]).is_err());
        assert!(ScoreMatrix::new("o", vec!["t".into()], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn criterion_names() {
        for c in Criterion::ALL {
            assert_eq!(c.to_string().parse::<Criterion>().unwrap(), c);
        }
        assert!("accuracy".parse::<Criterion>().is_err());
    }
}
