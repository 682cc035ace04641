//! Confusion matrices, F1/accuracy, coverage and threshold sweeps.

mod confusion;
mod report;
mod sweep;

pub use confusion::{confusion, AbstentionPolicy, ClassScore, ConfusionMatrix, Outcome};
pub use report::{evaluate, outcomes_from_rows, EvaluationReport, PolicyScores};
pub use sweep::{
    parse_grid, percentile_grid, read_sweep_csv, relevant_coverage_at_f1, softmax_grid, sweep,
    write_sweep_csv, SweepRow,
};
