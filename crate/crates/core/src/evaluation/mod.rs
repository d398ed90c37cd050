//! Belief-state prediction, joint goal accuracy, fine-grained activeness
//! metrics and the leave-one-domain-out protocol.

mod metrics;
mod predict;
mod protocol;

pub use metrics::{
    counts, fine_grained_metrics, joint_goal_accuracy, metrics_report, records_to_jsonl, Counts, DomainMetrics,
    FineGrained, MetricsReport, PredictionRecord,
};
pub use predict::{thread_pool, Predictor, THREADS_ENV};
pub use protocol::{zero_shot_protocol, zero_shot_split, ZeroShotRun, ZeroShotSplit, ZeroShotSummary};
