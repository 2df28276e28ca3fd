//! Loss, metrics, the training loop, checkpoints and evaluation.

mod checkpoint;
mod eval;
mod metrics;
mod normalize;
mod report;
mod trainer;

pub use checkpoint::{checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, MANIFEST_FILE};
pub use eval::{
    baseline_copy_previous, evaluate, predict, report_from_predictions, write_metrics, ClassMetrics, MetricsReport,
    StrideMetrics,
};
pub use metrics::{mean_std, mse, mse_loss, pcc, rmse};
pub use normalize::Normalizer;
pub use report::merge_reports;
pub use trainer::{train, write_log, LogRecord, TrainConfig, TrainOutcome};
