//! Wiring: feature extraction, embedding tables, pair and stream scoring,
//! and the end-to-end experiment.

mod pipeline;
mod scoring;

pub use pipeline::{
    evaluate_pairs, evaluate_streams, extract_features, new_model, pairs_report_text, run_experiment,
    stream_enrollments, stream_features, stream_report_text, summary_text, sv_pairs, tune_scm, ExperimentConfig,
    ExperimentResult, SplitData, StreamRun,
};
pub use scoring::{task_score, Enrollment, PairContext, Scorer};
