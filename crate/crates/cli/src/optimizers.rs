use std::fmt;
use std::str::FromStr;

use celo::baselines::{AdamConfig, Baseline, SgdmConfig};
use celo::lopt::{Celo, CeloParams, SchedulerForm, Variant};
use celo::{Error, Optimizer, Result};

/// An entry of `eval.optimizers`.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerSpec {
    /// Trained Celo from the checkpoint, with a variant and scheduler form.
    Celo { variant: Variant, form: SchedulerForm },
    Adam(f64),
    Sgdm(f64),
    /// Adam at the learning rate the sweep picked for each task.
    AdamBest,
}

pub const ADAM_BEST: &str = "adam_best";

impl OptimizerSpec {
    pub fn needs_checkpoint(&self) -> bool {
        matches!(self, OptimizerSpec::Celo { .. })
    }

    /// Identifier used in record file names.
    pub fn label(&self) -> String {
        match self {
            OptimizerSpec::AdamBest => ADAM_BEST.into(),
            other => other.build(None, None).map(|o| o.id()).unwrap_or_default(),
        }
    }

    /// Concrete optimizer. `celo` supplies trained weights; `best_lr` the
    /// per-task sweep winner.
    pub fn build(&self, celo: Option<&CeloParams>, best_lr: Option<f64>) -> Result<Box<dyn Optimizer>> {
        Ok(match self {
            OptimizerSpec::Celo { variant, form } => {
                let params = match celo {
                    Some(p) => p.clone(),
                    None => CeloParams::init(&celo::RngStream::new(0)),
                };
                Box::new(Celo { params, variant: *variant, form: *form })
            }
            OptimizerSpec::Adam(lr) => Box::new(Baseline::Adam(AdamConfig::new(*lr)?)),
            OptimizerSpec::Sgdm(lr) => Box::new(Baseline::Sgdm(SgdmConfig::new(*lr))),
            OptimizerSpec::AdamBest => {
                let lr = best_lr.ok_or_else(|| Error::NoValidBaseline("no sweep result for adam_best".into()))?;
                Box::new(Baseline::Adam(AdamConfig::new(lr)?))
            }
        })
    }
}

impl FromStr for OptimizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lr = |text: &str| -> Result<f64> {
            match text.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
                _ => Err(Error::InvalidArgument(format!("bad learning rate in {s:?}"))),
            }
        };
        if let Some(rest) = s.strip_prefix("adam:") {
            return Ok(OptimizerSpec::Adam(lr(rest)?));
        }
        if let Some(rest) = s.strip_prefix("sgdm:") {
            return Ok(OptimizerSpec::Sgdm(lr(rest)?));
        }
        if s == ADAM_BEST {
            return Ok(OptimizerSpec::AdamBest);
        }
        if s == "celo" {
            return Ok(OptimizerSpec::Celo { variant: Variant::Full, form: SchedulerForm::Exp });
        }
        if let Some(rest) = s.strip_prefix("celo_") {
            if let Ok(variant) = rest.parse::<Variant>() {
                return Ok(OptimizerSpec::Celo { variant, form: SchedulerForm::Exp });
            }
            if let Ok(form) = rest.parse::<SchedulerForm>() {
                return Ok(OptimizerSpec::Celo { variant: Variant::Full, form });
            }
        }
        Err(Error::InvalidArgument(format!(
            "unknown optimizer {s:?} (expected celo, celo_<variant|form>, adam:<lr>, sgdm:<lr> or adam_best)"
        )))
    }
}

impl fmt::Display for OptimizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_form() {
        for (text, label) in [
            ("celo", "celo"),
            ("celo_no_scheduler", "celo_no_scheduler"),
            ("celo_adam_rule_with_scheduler", "celo_adam_rule_with_scheduler"),
            ("celo_linear", "celo_linear"),
            ("celo_linear_clip", "celo_linear_clip"),
            ("adam:1e-3", "adam_lr1e-3"),
            ("sgdm:0.1", "sgdm_lr1e-1"),
            ("adam_best", "adam_best"),
        ] {
            assert_eq!(text.parse::<OptimizerSpec>().unwrap().label(), label, "{text}");
        }
        assert!("adam:-1".parse::<OptimizerSpec>().is_err());
        assert!("celo_fancy".parse::<OptimizerSpec>().is_err());
    }
}
