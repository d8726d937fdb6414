//! Run configuration: per-task presets, flat `key = value` files and the
//! manifest echo.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tsdl::zoo::Hyper;

/// Keys the engine's `Hyper::set` understands; passed through unchanged.
const HYPER_KEYS: &[&str] = &[
    "filters",
    "kernel",
    "first_kernel",
    "pool",
    "units",
    "se_ratio",
    "dropout",
    "recurrent",
    "attention_head",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Forecast,
    Classify,
    Anomaly,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forecast" => Ok(Task::Forecast),
            "classify" => Ok(Task::Classify),
            "anomaly" => Ok(Task::Anomaly),
            _ => Err(format!("unknown task '{s}' (forecast, classify, anomaly)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Forecast => "forecast",
            Task::Classify => "classify",
            Task::Anomaly => "anomaly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synth {
    Sine,
    Segments,
    Traffic,
}

impl FromStr for Synth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sine" => Ok(Synth::Sine),
            "segments" => Ok(Synth::Segments),
            "traffic" => Ok(Synth::Traffic),
            _ => Err(format!("unknown synthetic source '{s}' (sine, segments, traffic)")),
        }
    }
}

impl fmt::Display for Synth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Synth::Sine => "sine",
            Synth::Segments => "segments",
            Synth::Traffic => "traffic",
        })
    }
}

/// Every setting of a run. Unset optional fields fall back to the task
/// preset when the run is resolved.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub model: Option<String>,
    pub csv: Option<PathBuf>,
    pub synth: Option<Synth>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub delta: Option<f64>,
    pub lr: Option<f64>,
    pub clip_norm: Option<f64>,
    /// Input window; raised to the model's minimum when left unset.
    pub input: Option<usize>,
    /// Forecast horizon, or forecast steps for anomaly scoring.
    pub horizon: Option<usize>,
    pub smooth_window: Option<usize>,
    pub smooth_iterations: Option<usize>,
    pub synth_length: Option<usize>,
    pub csv_header: Option<bool>,
    pub columns: Option<String>,
    pub hyper: Vec<(String, String)>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task = Some(v.parse()?),
            "model" => self.model = Some(v.to_string()),
            "csv" => self.csv = Some(PathBuf::from(v)),
            "synth" => self.synth = Some(v.parse()?),
            "seed" => self.seed = Some(parse(key, v)?),
            "epochs" => self.epochs = Some(parse(key, v)?),
            "batch_size" => self.batch_size = Some(parse(key, v)?),
            "patience" => self.patience = Some(parse(key, v)?),
            "delta" => self.delta = Some(parse(key, v)?),
            "lr" => self.lr = Some(parse(key, v)?),
            "clip_norm" => self.clip_norm = Some(parse(key, v)?),
            "input" => self.input = Some(parse(key, v)?),
            "horizon" => self.horizon = Some(parse(key, v)?),
            "smooth_window" => self.smooth_window = Some(parse(key, v)?),
            "smooth_iterations" => self.smooth_iterations = Some(parse(key, v)?),
            "synth_length" => self.synth_length = Some(parse(key, v)?),
            "csv_header" => self.csv_header = Some(parse(key, v)?),
            "columns" => self.columns = Some(v.to_string()),
            // written into manifests for the record
            "version" => {}
            k if HYPER_KEYS.contains(&k) => {
                Hyper::default().set(k, v).map_err(|e| e.to_string())?;
                self.hyper.retain(|(old, _)| old != k);
                self.hyper.push((k.to_string(), v.to_string()));
            }
            other => return Err(format!("unknown setting '{other}'")),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut c = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{} line {}: expected key = value", path.display(), i + 1))?;
            c.set(k, v).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        }
        Ok(c)
    }

    /// Settings of `other` win over ours.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        // a data source in `other` replaces ours of either kind
        if other.csv.is_some() || other.synth.is_some() {
            self.csv = None;
            self.synth = None;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            task, model, csv, synth, seed, epochs, batch_size, patience, delta, lr, clip_norm, input, horizon,
            smooth_window, smooth_iterations, synth_length, csv_header, columns
        );
        for (k, v) in other.hyper {
            self.hyper.retain(|(old, _)| *old != k);
            self.hyper.push((k, v));
        }
        self
    }

    /// Fills every unset field from the task preset.
    pub fn resolve(self) -> Result<Resolved, String> {
        let task = self.task.ok_or("no task given (--task forecast|classify|anomaly)")?;
        let model = self.model.ok_or("no model given (--model NAME)")?;
        let source = match (self.csv, self.synth) {
            (Some(p), None) => Source::Csv(p),
            (None, Some(s)) => Source::Synth(s),
            (None, None) => return Err("no data source given (--csv PATH or --synth KIND)".into()),
            (Some(_), Some(_)) => return Err("give exactly one of --csv and --synth".into()),
        };
        let preset = Preset::of(task);
        let csv = matches!(source, Source::Csv(_));
        let r = Resolved {
            task,
            model,
            seed: self.seed.unwrap_or(1),
            epochs: self.epochs.unwrap_or(preset.epochs),
            batch_size: self.batch_size.unwrap_or(preset.batch_size),
            patience: self.patience.unwrap_or(preset.patience),
            delta: self.delta.unwrap_or(0.0),
            lr: self.lr.unwrap_or(preset.lr),
            clip_norm: self.clip_norm,
            input: self.input,
            horizon: self.horizon.unwrap_or(preset.horizon),
            // the moving average is meant for measured series, not clean synthetic ones
            smooth_window: self.smooth_window.unwrap_or(if csv { preset.smooth_window } else { 0 }),
            smooth_iterations: self.smooth_iterations.unwrap_or(preset.smooth_iterations),
            synth_length: self.synth_length,
            csv_header: self.csv_header.unwrap_or(true),
            columns: self.columns,
            hyper: self.hyper,
            source,
        };
        if r.epochs == 0 || r.batch_size == 0 || r.horizon == 0 {
            return Err("epochs, batch_size and horizon must be positive".into());
        }
        if r.input == Some(0) {
            return Err("input must be positive".into());
        }
        Ok(r)
    }
}

/// Per-task defaults: losses and patience follow the three task protocols,
/// window sizes are scaled down for desk runs.
struct Preset {
    epochs: usize,
    batch_size: usize,
    patience: usize,
    lr: f64,
    horizon: usize,
    smooth_window: usize,
    smooth_iterations: usize,
}

impl Preset {
    fn of(task: Task) -> Self {
        match task {
            Task::Forecast => Preset {
                epochs: 30,
                batch_size: 256,
                patience: 2,
                lr: 1e-3,
                horizon: 10,
                smooth_window: 50,
                smooth_iterations: 5,
            },
            Task::Classify => Preset {
                epochs: 30,
                batch_size: 32,
                patience: 3,
                lr: 3e-3,
                horizon: 1,
                smooth_window: 0,
                smooth_iterations: 0,
            },
            Task::Anomaly => Preset {
                epochs: 30,
                batch_size: 64,
                patience: 3,
                lr: 3e-3,
                horizon: 4,
                smooth_window: 0,
                smooth_iterations: 0,
            },
        }
    }
}

/// Default input windows before raising to the model's minimum.
pub fn preset_input(task: Task) -> usize {
    match task {
        Task::Forecast => 100,
        Task::Classify => 128,
        Task::Anomaly => 16,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv(PathBuf),
    Synth(Synth),
}

/// A fully specified run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub task: Task,
    pub model: String,
    pub source: Source,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub delta: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub input: Option<usize>,
    pub horizon: usize,
    pub smooth_window: usize,
    pub smooth_iterations: usize,
    pub synth_length: Option<usize>,
    pub csv_header: bool,
    pub columns: Option<String>,
    pub hyper: Vec<(String, String)>,
}

impl Resolved {
    pub fn hyper(&self) -> Result<Hyper, tsdl::Error> {
        let mut h = Hyper::for_model(&self.model)?;
        for (k, v) in &self.hyper {
            h.set(k, v)?;
        }
        Ok(h)
    }

    /// `key = value` lines that rebuild this run through `--config`.
    /// `input` is the window actually used.
    pub fn manifest(&self, input: usize, synth_length: Option<usize>) -> String {
        let mut lines = vec![
            format!("version = {}", env!("CARGO_PKG_VERSION")),
            format!("task = {}", self.task),
            format!("model = {}", self.model),
        ];
        match &self.source {
            Source::Csv(p) => lines.push(format!("csv = {}", p.display())),
            Source::Synth(s) => lines.push(format!("synth = {s}")),
        }
        lines.extend([
            format!("seed = {}", self.seed),
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("patience = {}", self.patience),
            format!("delta = {}", self.delta),
            format!("lr = {}", self.lr),
            format!("input = {input}"),
            format!("horizon = {}", self.horizon),
            format!("smooth_window = {}", self.smooth_window),
            format!("smooth_iterations = {}", self.smooth_iterations),
            format!("csv_header = {}", self.csv_header),
        ]);
        if let Some(c) = self.clip_norm {
            lines.push(format!("clip_norm = {c}"));
        }
        if let Some(n) = synth_length {
            lines.push(format!("synth_length = {n}"));
        }
        if let Some(c) = &self.columns {
            lines.push(format!("columns = {c}"));
        }
        for (k, v) in &self.hyper {
            lines.push(format!("{k} = {v}"));
        }
        lines.join("\n") + "\n"
    }
}
