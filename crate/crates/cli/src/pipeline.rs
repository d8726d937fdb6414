//! Task pipelines: data preparation, training and the held-out metric.

use std::fmt;
use std::path::Path;

use tsdl::data::{self, synth, Column, Scaler, Scaling, SeriesDataset, DEFAULT_SPLIT};
use tsdl::train::{self, AdamConfig, EarlyStopping, FitReport, Loss, TrainConfig};
use tsdl::zoo::{self, Hyper, TopModule};
use tsdl::{Error, Model, Tensor};

use crate::config::{preset_input, Resolved, Source, Synth, Task};

/// A failed run, grouped by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Diverged(String),
    Data(String),
    Weights(String),
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::Data(_) => 4,
            Failure::Weights(_) => 5,
        }
    }

    /// Engine errors raised while reading or shaping data.
    fn data(e: Error) -> Self {
        match e {
            Error::UnknownModel(_) | Error::Param(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }

    /// Engine errors raised while building or training a model.
    fn model(e: Error) -> Self {
        match e {
            Error::UnknownModel(_) | Error::Param(_) => Failure::Usage(e.to_string()),
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            Error::Data(_) | Error::MetricUndefined(_) => Failure::Data(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Diverged(m) => ("diverged", m),
            Failure::Data(m) => ("data", m),
            Failure::Weights(m) => ("weights", m),
            Failure::Internal(m) => ("internal", m),
        };
        write!(f, "{kind} error: {msg}")
    }
}

/// Splits, shapes and head for one run.
pub struct Prepared {
    pub train: SeriesDataset,
    pub val: SeriesDataset,
    pub test: SeriesDataset,
    /// Per-window anomaly flags of the test split.
    pub test_flags: Option<Vec<bool>>,
    pub input: usize,
    pub channels: usize,
    pub synth_length: Option<usize>,
    pub hyper: Hyper,
    pub top: TopModule,
}

fn synth_kind(task: Task) -> Synth {
    match task {
        Task::Forecast => Synth::Sine,
        Task::Classify => Synth::Segments,
        Task::Anomaly => Synth::Traffic,
    }
}

fn check_source(r: &Resolved) -> Result<(), Failure> {
    if let Source::Synth(s) = r.source {
        if s != synth_kind(r.task) {
            return Err(Failure::Usage(format!(
                "synthetic source '{s}' does not fit task '{}' (use '{}')",
                r.task,
                synth_kind(r.task)
            )));
        }
    }
    Ok(())
}

fn read_csv(path: &Path, r: &Resolved) -> Result<Tensor, Failure> {
    let columns: Vec<Column> = match &r.columns {
        None => Vec::new(),
        Some(list) => list
            .split(',')
            .map(|c| {
                let c = c.trim();
                c.parse::<usize>().map(Column::from).unwrap_or_else(|_| Column::from(c))
            })
            .collect(),
    };
    data::load_csv(path, r.csv_header, &columns).map_err(Failure::data)
}

/// Input window: the configured one, or the preset raised to what the model
/// accepts.
fn input_window(r: &Resolved, hyper: &Hyper, channels: usize) -> Result<usize, Failure> {
    if let Some(i) = r.input {
        return Ok(i);
    }
    let min = zoo::min_input_length(&r.model, channels, hyper).map_err(Failure::model)?;
    Ok(preset_input(r.task).max(min))
}

pub fn prepare(r: &Resolved) -> Result<Prepared, Failure> {
    check_source(r)?;
    let hyper = r.hyper().map_err(Failure::model)?;
    match r.task {
        Task::Forecast => forecast_data(r, hyper),
        Task::Classify => classify_data(r, hyper),
        Task::Anomaly => anomaly_data(r, hyper),
    }
}

fn forecast_data(r: &Resolved, hyper: Hyper) -> Result<Prepared, Failure> {
    let (mut raw, synth_length) = match &r.source {
        Source::Csv(p) => (read_csv(p, r)?, None),
        Source::Synth(_) => {
            let n = r.synth_length.unwrap_or(4400);
            (synth::sine_mix(&[25.0, 60.0], 0.0, n, r.seed).map_err(Failure::data)?, Some(n))
        }
    };
    if r.smooth_window > 0 && r.smooth_iterations > 0 {
        raw = data::smooth(&raw, r.smooth_window, r.smooth_iterations).map_err(Failure::data)?;
    }
    let channels = raw.shape()[1];
    let input = input_window(r, &hyper, channels)?;
    let (a, b, c) = data::chrono_split(&raw, DEFAULT_SPLIT).map_err(Failure::data)?;
    let scaler = Scaler::fit(&a, Scaling::MinMax).map_err(Failure::data)?;
    let window = |s: &Tensor| -> Result<SeriesDataset, Failure> {
        let scaled = scaler.apply(s).map_err(Failure::data)?;
        data::windowize(&scaled, input, r.horizon, 1).map_err(Failure::data)
    };
    Ok(Prepared {
        train: window(&a)?,
        val: window(&b)?,
        test: window(&c)?,
        test_flags: None,
        input,
        channels,
        synth_length,
        top: TopModule::forecast(r.horizon, channels).map_err(Failure::model)?,
        hyper,
    })
}

/// Segment rows of a csv file: class id first, then the samples.
fn csv_segments(raw: &Tensor, input: usize) -> Result<SeriesDataset, Failure> {
    let [rows, width] = raw.shape() else { unreachable!("csv tables are rank 2") };
    if *width < 2 {
        return Err(Failure::Data("segment rows need a class id and at least one sample".into()));
    }
    let mut ids = Vec::with_capacity(*rows);
    let mut values = Vec::with_capacity(rows * input);
    for (i, row) in raw.data().chunks(*width).enumerate() {
        let id = row[0];
        if id < 0.0 || id.fract() != 0.0 {
            return Err(Failure::Data(format!("row {}: class id {id} is not a non-negative integer", i + 1)));
        }
        ids.push(id as usize);
        let z = data::zscore(&row[1..]).map_err(|e| Failure::Data(format!("row {}: {e}", i + 1)))?;
        values.extend(data::pad_or_truncate(&z, input));
    }
    let classes = ids.iter().max().map_or(0, |m| m + 1).max(2);
    let inputs = Tensor::new(&[*rows, input, 1], values).map_err(Failure::data)?;
    let targets = data::one_hot(&ids, classes).map_err(Failure::data)?;
    SeriesDataset::new(inputs, targets, "csv segments, z-scored, padded or truncated").map_err(Failure::data)
}

fn classify_data(r: &Resolved, hyper: Hyper) -> Result<Prepared, Failure> {
    let input = input_window(r, &hyper, 1)?;
    let (set, synth_length) = match &r.source {
        Source::Csv(p) => (csv_segments(&read_csv(p, r)?, input)?, None),
        Source::Synth(_) => {
            // for segments the length setting is the count per class
            let per_class = r.synth_length.unwrap_or(100);
            (synth::labeled_segments(5, input, per_class, r.seed).map_err(Failure::data)?, Some(per_class))
        }
    };
    let classes = set.targets.shape()[1];
    let (train, val, test) = set.chrono_split(DEFAULT_SPLIT).map_err(Failure::data)?;
    Ok(Prepared {
        train,
        val,
        test,
        test_flags: None,
        input,
        channels: 1,
        synth_length,
        top: TopModule::classify(classes).map_err(Failure::model)?,
        hyper,
    })
}

fn anomaly_data(r: &Resolved, hyper: Hyper) -> Result<Prepared, Failure> {
    let (raw, labels, synth_length) = match &r.source {
        Source::Csv(p) => {
            // the last column holds the 0/1 label
            let t = read_csv(p, r)?;
            let [rows, width] = *t.shape() else { unreachable!("csv tables are rank 2") };
            if width < 2 {
                return Err(Failure::Data("anomaly rows need features and a trailing label".into()));
            }
            let features: Vec<f64> = t.data().chunks(width).flat_map(|row| row[..width - 1].to_vec()).collect();
            let labels = t.data().chunks(width).map(|row| row[width - 1] != 0.0).collect::<Vec<_>>();
            (Tensor::new(&[rows, width - 1], features).map_err(Failure::data)?, labels, None)
        }
        Source::Synth(_) => {
            let n = r.synth_length.unwrap_or(12_000);
            let (s, l) = synth::traffic_with_anomalies(4, n, 0.01, r.seed).map_err(Failure::data)?;
            (s, l, Some(n))
        }
    };
    let channels = raw.shape()[1];
    let input = input_window(r, &hyper, channels)?;
    let steps = r.horizon;
    let (a, b, c) = data::chrono_split(&raw, DEFAULT_SPLIT).map_err(Failure::data)?;
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let scaler = Scaler::fit(&a, Scaling::ZScore).map_err(Failure::data)?;
    let scaled = |s: &Tensor| scaler.apply(s).map_err(Failure::data);
    let train = data::normal_windows(&scaled(&a)?, &labels[..na], input, steps).map_err(Failure::data)?;
    let val = data::normal_windows(&scaled(&b)?, &labels[na..na + nb], input, steps).map_err(Failure::data)?;
    let (test, flags) =
        data::labeled_windows(&scaled(&c)?, &labels[na + nb..], input, steps, steps).map_err(Failure::data)?;
    Ok(Prepared {
        train,
        val,
        test,
        test_flags: Some(flags),
        input,
        channels,
        synth_length,
        top: TopModule::anomaly(steps, channels).map_err(Failure::model)?,
        hyper,
    })
}

pub fn build(r: &Resolved, p: &Prepared) -> Result<Model, Failure> {
    zoo::build_model_with(&r.model, &[p.input, p.channels], &p.hyper, Some(&p.top), r.seed).map_err(Failure::model)
}

pub fn train_config(r: &Resolved) -> Result<TrainConfig, Failure> {
    let loss = match r.task {
        Task::Forecast | Task::Anomaly => Loss::Mse,
        Task::Classify => Loss::CategoricalCrossentropy,
    };
    Ok(TrainConfig {
        loss,
        batch_size: r.batch_size,
        max_epochs: r.epochs,
        early_stopping: Some(EarlyStopping::new(r.patience, r.delta).map_err(Failure::model)?),
        optimizer: AdamConfig {
            lr: r.lr,
            clip_norm: r.clip_norm,
            ..AdamConfig::default()
        },
        seed: r.seed,
    })
}

pub fn fit(r: &Resolved, p: &Prepared, model: &mut Model) -> Result<FitReport, Failure> {
    train::fit(model, &p.train, &p.val, &train_config(r)?).map_err(Failure::model)
}

/// The task metric on the test split, as `(name, value)` pairs.
pub fn evaluate(r: &Resolved, p: &Prepared, model: &Model) -> Result<Vec<(&'static str, f64)>, Failure> {
    match r.task {
        Task::Forecast => {
            let pred = train::predict_all(model, &p.test.inputs, 256).map_err(Failure::model)?;
            Ok(vec![("mae", train::mae(&pred, &p.test.targets).map_err(Failure::model)?)])
        }
        Task::Classify => {
            let pred = train::predict_all(model, &p.test.inputs, 256).map_err(Failure::model)?;
            Ok(vec![("accuracy", train::accuracy(&pred, &p.test.targets).map_err(Failure::model)?)])
        }
        Task::Anomaly => {
            let flags = p.test_flags.as_ref().expect("anomaly runs carry test flags");
            let k = flags.iter().filter(|&&f| f).count();
            let report = data::anomaly_harness(model, &p.test, flags, k).map_err(Failure::model)?;
            let hits = report.predicted.iter().zip(flags).filter(|(a, b)| **a && **b).count();
            let precision = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
            Ok(vec![("auc", report.auc), ("top_k_precision", precision)])
        }
    }
}

pub fn metrics_record(metrics: &[(&str, f64)]) -> String {
    metrics.iter().map(|(n, v)| format!("metric {n} value {v}\n")).collect()
}
