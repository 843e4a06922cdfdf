//! Evaluation: statistics, learning curves, experiment orchestration and
//! report files.

mod curve;
mod experiment;
mod report;
mod stats;

pub use curve::{learning_curve, CurvePoint, LearningCurve, DEFAULT_STEP, HOLDOUT_FRACTION};
pub use experiment::{
    design_for, evaluate, evaluate_design, run_experiment, run_on_dataset, seeded_pipeline, EvalReport,
    ExperimentSpec, Method,
};
pub use report::{
    curve_to_csv, curve_to_svg, emit_report, reports_to_csv, reports_to_json, ReportFormat,
    REPORT_CSV_HEADER,
};
pub use stats::{accuracy, binomial_pvalue, confusion_matrix, ln_factorial};
