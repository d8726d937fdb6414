use std::fmt;

use rand::seq::SliceRandom;

use super::{Adam, AdamConfig, Loss};
use crate::data::SeriesDataset;
use crate::error::{shape_err, Error, Result};
use crate::graph::Model;
use crate::layers::Mode;
use crate::tensor::{seeded_rng, Tensor};

/// Halt after `patience` epochs in a row without `val < best - min_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Result<Self> {
        if min_delta.is_nan() || min_delta < 0.0 {
            return Err(Error::Param(format!("min_delta must be non-negative, got {min_delta}")));
        }
        Ok(Self { patience, min_delta })
    }
}

/// What the stopping rule decided after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

/// Running state of the stopping rule.
#[derive(Debug, Clone)]
pub struct StopTracker {
    rule: EarlyStopping,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl StopTracker {
    pub fn new(rule: EarlyStopping) -> Self {
        Self {
            rule,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if self.best_epoch.is_none() || val_loss < self.best - self.rule.min_delta {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            return Verdict::Improved;
        }
        self.wait += 1;
        if self.wait >= self.rule.patience {
            Verdict::Stop
        } else {
            Verdict::Wait
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Replays a validation-loss sequence through the stopping rule and
/// returns `(last epoch run, best epoch)`, both zero-based.
pub fn replay_stopping(losses: &[f64], rule: EarlyStopping) -> Option<(usize, usize)> {
    let mut tracker = StopTracker::new(rule);
    for (epoch, &l) in losses.iter().enumerate() {
        if tracker.observe(epoch, l) == Verdict::Stop {
            return Some((epoch, tracker.best_epoch()?));
        }
    }
    Some((losses.len().checked_sub(1)?, tracker.best_epoch()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` runs every epoch and keeps the final weights.
    pub early_stopping: Option<EarlyStopping>,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Mse,
            batch_size: 256,
            max_epochs: 150,
            early_stopping: Some(EarlyStopping {
                patience: 2,
                min_delta: 0.0,
            }),
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Param("max epochs must be at least 1".into()));
        }
        if let Some(es) = self.early_stopping {
            EarlyStopping::new(es.patience, es.min_delta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} train_loss {} val_loss {}",
            self.epoch, self.train_loss, self.val_loss
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights the model holds on return.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.history {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// One input tensor per model input; multi-branch models see the same series
/// on every branch.
pub fn branch_inputs<'a>(model: &Model, x: &'a Tensor) -> Vec<&'a Tensor> {
    vec![x; model.input_names().len()]
}

fn check_dataset(model: &Model, data: &SeriesDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    let sample = &data.inputs.shape()[1..];
    if model.input_shapes().iter().any(|s| *s != sample) {
        return Err(shape_err!(
            "{what} inputs have per-sample shape {sample:?}, model expects {:?}",
            model.input_shapes()
        ));
    }
    if &data.targets.shape()[1..] != model.output_shape() {
        return Err(shape_err!(
            "{what} targets have per-sample shape {:?}, model outputs {:?}",
            &data.targets.shape()[1..],
            model.output_shape()
        ));
    }
    Ok(())
}

/// Eval-mode predictions for every row, computed in chunks.
pub fn predict_all(model: &Model, inputs: &Tensor, chunk: usize) -> Result<Tensor> {
    let n = inputs.shape()[0];
    let chunk = chunk.max(1);
    let mut parts = Vec::new();
    for start in (0..n).step_by(chunk) {
        let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let x = inputs.take_rows(&rows)?;
        parts.push(model.predict(&branch_inputs(model, &x))?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs, 0)
}

fn snapshot(model: &Model) -> Vec<(String, Tensor)> {
    model.state().into_iter().map(|(n, t)| (n, t.clone())).collect()
}

fn restore(model: &mut Model, saved: Vec<(String, Tensor)>) {
    let mut saved: std::collections::HashMap<String, Tensor> = saved.into_iter().collect();
    for (name, t) in model.state_mut() {
        if let Some(src) = saved.remove(&name) {
            *t = src;
        }
    }
}

/// Mini-batch Adam training with per-epoch validation.
///
/// Training pairs are reshuffled every epoch from `config.seed`; the final
/// partial batch is kept. With early stopping the model ends holding the
/// weights of its best validation epoch.
pub fn fit(
    model: &mut Model,
    train: &SeriesDataset,
    val: &SeriesDataset,
    config: &TrainConfig,
) -> Result<FitReport> {
    config.validate()?;
    check_dataset(model, train, "training")?;
    check_dataset(model, val, "validation")?;
    let mut rng = seeded_rng(config.seed);
    let mut opt = Adam::new(config.optimizer);
    let mut tracker = config.early_stopping.map(StopTracker::new);
    let mut best_state = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(config.batch_size) {
            let x = train.inputs.take_rows(rows)?;
            let y = train.targets.take_rows(rows)?;
            let pred = model.forward_mode(&branch_inputs(model, &x), Mode::Train)?;
            let (loss, grad) = config.loss.evaluate(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * rows.len() as f64;
            let grads = model.backward(&grad)?;
            opt.step(model.params_mut(), &grads.params)?;
        }
        let train_loss = total / n as f64;
        let val_pred = predict_all(model, &val.inputs, config.batch_size)?;
        let val_loss = config.loss.value(&val_pred, &val.targets)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(t) = tracker.as_mut() {
            match t.observe(epoch, val_loss) {
                Verdict::Improved => best_state = Some(snapshot(model)),
                Verdict::Wait => {}
                Verdict::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_epoch, best_val_loss) = match &tracker {
        Some(t) => {
            if let Some(saved) = best_state {
                restore(model, saved);
            }
            (t.best_epoch().unwrap_or(0), t.best())
        }
        None => {
            let last = history.last().expect("at least one epoch");
            (last.epoch, last.val_loss)
        }
    };
    Ok(FitReport {
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
