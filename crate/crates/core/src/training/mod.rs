//! Losses, optimizer, metrics, the training loop and experiment grids.

mod experiments;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use experiments::{
    ablation_csv, run_ablation, run_leave_sensors_experiment, summarize_ablation, AblationRun, LeaveOutCell,
    LeaveOutGrid, LeaveOutSettings, Stat, SummaryRow,
};
pub use loss::{loss, loss_value};
pub use metrics::{
    argmax, auprc, auroc, classification_report, logistic, multilabel_report, report_from_logits, softmax,
    MetricsReport, RunMeta,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use trainer::{
    batch_loss_and_grads, evaluate, evaluate_prepared, predict, sample_loss_and_grads, train, train_monitored,
    EpochRecord, History, MonitoredOutcome, Prepared, TrainConfig, TrainOutcome,
};
