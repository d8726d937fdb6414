//! Losses, the Adam optimizer, the training loop and task metrics.

mod fit;
mod loss;
mod metrics;
mod optim;
mod two_phase;

pub use fit::{
    branch_inputs, fit, predict_all, replay_stopping, EarlyStopping, EpochRecord, FitReport, StopTracker,
    TrainConfig, Verdict,
};
pub use loss::{Loss, CE_EPSILON, ROW_SUM_TOLERANCE};
pub use metrics::{accuracy, argmax, auc, mae, Metric};
pub use optim::{Adam, AdamConfig};
pub use two_phase::{two_phase_autoencoder_fit, TwoPhaseReport};
