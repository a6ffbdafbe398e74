//! Detection metrics, per-task evaluation and report formats.

mod metrics;
mod report;

pub use metrics::{decide, eer, far_at_frr, far_frr_curve, frr_at_far, threshold_at_frr, CurvePoint, ScoreSet};
pub use report::{
    det_text, evaluate_stream, evaluate_task, histogram_text, stream_text, task_score_set, DecisionThreshold,
    MetricReport, Metrics, StreamMetrics, ThresholdRule, FAR_TARGETS, FRR_TARGETS,
};
