//! Inner training runs, curve post-processing, Adam-normalized scores and
//! their robust aggregates.

mod metrics;
mod record;
mod report;
mod run;
mod svg;

pub use metrics::{
    final_loss, iqm, iqm_of, loss_score, loss_scores, median_of, median_score, optimality_gap, optimality_gap_of,
    smooth, speedup_score, speedup_scores, Criterion, MetricReport, ScoreMatrix, TaskRuns, FINAL_WINDOW, SMOOTHING,
};
pub use record::{parse_record_file_name, record_file_name, RunRecord};
pub use report::{report_csv, scores_csv, summary_table, REPORT_HEADER};
pub use run::{run_training, DEFAULT_STEPS};
pub use svg::{line_chart, Series};
