use std::fmt;

use super::{fit, FitReport, Loss, TrainConfig};
use crate::data::SeriesDataset;
use crate::error::Result;
use crate::graph::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseReport {
    /// Autoencoder reconstruction.
    pub phase1: FitReport,
    /// Classifier training with the encoder frozen.
    pub phase2: FitReport,
}

impl fmt::Display for TwoPhaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phase phase1")?;
        write!(f, "{}", self.phase1)?;
        writeln!(f, "phase phase2")?;
        write!(f, "{}", self.phase2)
    }
}

/// Pretrains `autoencoder` to reconstruct the training inputs with mse, copies
/// every parameter whose name starts with `encoder_prefix` into `classifier`,
/// then trains `classifier` with those parameters frozen.
///
/// The classifier is returned unfrozen; its encoder weights are exactly the
/// pretrained ones.
pub fn two_phase_autoencoder_fit(
    autoencoder: &mut Model,
    classifier: &mut Model,
    encoder_prefix: &str,
    train: &SeriesDataset,
    val: &SeriesDataset,
    config: &TrainConfig,
) -> Result<TwoPhaseReport> {
    let recon = |d: &SeriesDataset| SeriesDataset::new(d.inputs.clone(), d.inputs.clone(), "reconstruction");
    let phase1_config = TrainConfig {
        loss: Loss::Mse,
        ..config.clone()
    };
    let phase1 = fit(autoencoder, &recon(train)?, &recon(val)?, &phase1_config)?;

    classifier.copy_prefixed_state(autoencoder, encoder_prefix);
    classifier.freeze(encoder_prefix);
    let phase2 = fit(classifier, train, val, config);
    classifier.unfreeze_all();
    Ok(TwoPhaseReport {
        phase1,
        phase2: phase2?,
    })
}
