use std::fmt::Write as _;

use super::metrics::{Criterion, MetricReport, ScoreMatrix};

pub const REPORT_HEADER: &str = "optimizer,criterion,iqm,median,og";

/// One row per report, in the given order.
pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        writeln!(out, "{},{},{},{},{}", r.optimizer_id, r.criterion, r.iqm, r.median, r.optimality_gap)
            .expect("string write");
    }
    out
}

/// Every normalized score: `optimizer,criterion,task,trial,score`.
pub fn scores_csv(matrices: &[(Criterion, ScoreMatrix)]) -> String {
    let mut out = String::from("optimizer,criterion,task,trial,score\n");
    for (criterion, m) in matrices {
        for (task, row) in m.task_ids.iter().zip(&m.scores) {
            for (trial, s) in row.iter().enumerate() {
                writeln!(out, "{},{criterion},{task},{trial},{s}", m.optimizer_id).expect("string write");
            }
        }
    }
    out
}

/// Plain-text table in the layout median / OG / IQM per criterion.
pub fn summary_table(reports: &[MetricReport]) -> String {
    let mut optimizers: Vec<&str> = Vec::new();
    for r in reports {
        if !optimizers.contains(&r.optimizer_id.as_str()) {
            optimizers.push(&r.optimizer_id);
        }
    }
    let width = optimizers.iter().map(|o| o.len()).max().unwrap_or(0).max(9);
    let mut out = format!("{:width$}", "optimizer");
    for c in Criterion::ALL {
        for m in ["median", "og", "iqm"] {
            write!(out, " {:>18}", format!("{c}:{m}")).expect("string write");
        }
    }
    out.push('\n');
    for opt in optimizers {
        write!(out, "{opt:width$}").expect("string write");
        for c in Criterion::ALL {
            match reports.iter().find(|r| r.optimizer_id == opt && r.criterion == c) {
                Some(r) => {
                    for v in [r.median, r.optimality_gap, r.iqm] {
                        write!(out, " {v:>18.4}").expect("string write");
                    }
                }
                None => out.push_str(&format!(" {:>18} {:>18} {:>18}", "-", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}
