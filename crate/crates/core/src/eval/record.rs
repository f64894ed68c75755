use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One inner training trajectory.
///
/// `losses[t]` is the loss observed before update `t`. A diverged run keeps
/// its finite prefix and is padded with `+∞` up to the configured length.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub task_id: String,
    pub optimizer_id: String,
    pub seed: u64,
    pub losses: Vec<f64>,
    pub etas: Option<Vec<f64>>,
    pub diverged: bool,
}

impl RunRecord {
    pub fn from_losses(
        task_id: impl Into<String>,
        optimizer_id: impl Into<String>,
        seed: u64,
        losses: Vec<f64>,
        etas: Option<Vec<f64>>,
    ) -> Self {
        let diverged = losses.iter().any(|l| !l.is_finite());
        Self { task_id: task_id.into(), optimizer_id: optimizer_id.into(), seed, losses, etas, diverged }
    }

    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    /// `step,loss[,eta]` CSV. Floats use shortest round-trip formatting, so
    /// reading the file back reproduces every bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.losses.len() * 32);
        match &self.etas {
            Some(_) => out.push_str("step,loss,eta\n"),
            None => out.push_str("step,loss\n"),
        }
        for (t, loss) in self.losses.iter().enumerate() {
            match &self.etas {
                Some(etas) => {
                    let eta = etas.get(t).copied().unwrap_or(f64::NAN);
                    writeln!(out, "{t},{loss},{eta}").expect("string write");
                }
                None => writeln!(out, "{t},{loss}").expect("string write"),
            }
        }
        out
    }

    /// Parses the CSV body; identity fields come from the caller.
    pub fn from_csv(task_id: &str, optimizer_id: &str, seed: u64, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Record("empty record".into()))?;
        let with_eta = match header.trim() {
            "step,loss" => false,
            "step,loss,eta" => true,
            other => return Err(Error::Record(format!("unexpected header {other:?}"))),
        };
        let mut losses = Vec::new();
        let mut etas = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != if with_eta { 3 } else { 2 } {
                return Err(Error::Record(format!("line {}: wrong field count", i + 2)));
            }
            let step: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Record(format!("line {}: bad step {:?}", i + 2, fields[0])))?;
            if step != losses.len() {
                return Err(Error::Record(format!("line {}: expected step {}, got {step}", i + 2, losses.len())));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Record(format!("line {}: bad number {s:?}", i + 2)))
            };
            losses.push(parse(fields[1])?);
            if with_eta {
                etas.push(parse(fields[2])?);
            }
        }
        Ok(Self::from_losses(task_id, optimizer_id, seed, losses, with_eta.then_some(etas)))
    }

    pub fn file_name(&self) -> String {
        record_file_name(&self.task_id, &self.optimizer_id, self.seed)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(self.file_name()), self.to_csv())?;
        Ok(())
    }

    /// Loads a record saved by [`Self::save`], recovering identity from the file name.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Record(format!("bad record path {}", path.display())))?;
        let (task, opt, seed) = parse_record_file_name(name)
            .ok_or_else(|| Error::Record(format!("record file name {name:?} is not task__optimizer__seedN.csv")))?;
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&task, &opt, seed, &text)
    }
}

pub fn record_file_name(task_id: &str, optimizer_id: &str, seed: u64) -> String {
    format!("{task_id}__{optimizer_id}__seed{seed}.csv")
}

pub fn parse_record_file_name(name: &str) -> Option<(String, String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.split("__");
    let task = parts.next()?;
    let opt = parts.next()?;
    let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
    if parts.next().is_some() || task.is_empty() || opt.is_empty() {
        return None;
    }
    Some((task.to_string(), opt.to_string(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn divergence_marks_survive_csv() {
        let r = RunRecord::from_losses("t", "o", 3, vec![2.0, 1.5, f64::INFINITY, f64::INFINITY], Some(vec![1.0, 0.5]));
        assert!(r.diverged);
        let back = RunRecord::from_csv("t", "o", 3, &r.to_csv()).unwrap();
        assert_eq!(back.losses, r.losses);
        let etas = back.etas.unwrap();
        assert_eq!(&etas[..2], &[1.0, 0.5]);
        assert!(etas[2].is_nan());
        assert!(back.diverged);
    }

    #[test]
    fn rejects_malformed_csv() {
        assert!(RunRecord::from_csv("t", "o", 0, "").is_err());
        assert!(RunRecord::from_csv("t", "o", 0, "a,b\n").is_err());
        assert!(RunRecord::from_csv("t", "o", 0, "step,loss\n1,2.0\n").is_err());
        assert!(RunRecord::from_csv("t", "o", 0, "step,loss\n0,x\n").is_err());
        assert!(RunRecord::from_csv("t", "o", 0, "step,loss\n0,1,2\n").is_err());
    }

    #[test]
    fn file_names_round_trip() {
        let name = record_file_name("mlp_tanh", "adam_lr1e-3", 42);
        assert_eq!(parse_record_file_name(&name), Some(("mlp_tanh".into(), "adam_lr1e-3".into(), 42)));
        assert_eq!(parse_record_file_name("x__y.csv"), None);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(losses in prop::collection::vec(any::<f64>().prop_filter("no nan", |v| !v.is_nan()), 1..40)) {
            let r = RunRecord::from_losses("t", "o", 1, losses, None);
            let back = RunRecord::from_csv("t", "o", 1, &r.to_csv()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
