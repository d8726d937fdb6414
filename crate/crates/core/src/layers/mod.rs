//! Differentiable layers.
//!
//! Every layer is built from a [`LayerSpec`] once its per-sample input shapes
//! are known. Shapes passed around here never include the batch axis; the
//! tensors handed to [`Layer::forward`] always do.

mod activation;
mod attention;
mod blocks;
mod conv;
mod dense;
mod dropout;
mod norm;
mod pool;
mod recurrent;
mod shape;

use std::fmt;
use std::ops::AddAssign;

pub use activation::{Activation, ActivationLayer};
pub use attention::TanhAttention;
pub use blocks::Block;
pub use conv::{Conv1d, Padding};
pub use dense::Dense;
pub use dropout::Dropout;
pub use norm::BatchNorm;
pub use pool::{Pool1d, PoolKind};
pub use recurrent::{Gru, Lstm};
pub use shape::{
    Add, ChannelMean, Concat, FitTime, Flatten, Identity, Multiply, RepeatChannels, RepeatTime,
    Reshape, ReverseTime, Upsample1d,
};

use crate::error::{shape_err, Result};
use crate::tensor::{SeededRng, Tensor};

/// Train mode uses batch statistics and draws dropout masks; eval mode does neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Gradients produced by one backward call.
#[derive(Debug, Clone)]
pub struct Backward {
    /// One gradient per layer input, in input order.
    pub inputs: Vec<Tensor>,
    /// One gradient per parameter, in [`Layer::params`] order.
    pub params: Vec<Tensor>,
}

/// A layer instance with concrete parameters.
pub trait Layer: Send + Sync {
    fn kind(&self) -> LayerKind;

    /// Family counts contributed by this layer, including nested layers.
    fn families(&self) -> FamilyCounts {
        FamilyCounts::of(self.kind())
    }

    /// Runs the layer and caches what [`Layer::backward`] needs.
    ///
    /// In train mode this may also update running buffers and advance the
    /// dropout generator.
    fn forward(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor>;

    /// Eval-mode evaluation with no side effects.
    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Vector-Jacobian product against the most recent `forward`.
    fn backward(&mut self, grad: &Tensor) -> Result<Backward>;

    fn params(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }

    /// Non-trainable state saved alongside parameters (batch-norm statistics).
    fn buffers(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }

    /// Parameters followed by buffers.
    fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params_mut()
    }

    fn clone_box(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Concrete layer type, used for graph inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Input,
    Conv1d,
    MaxPool1d,
    AvgPool1d,
    GlobalAvgPool1d,
    Dense,
    BatchNorm,
    Dropout,
    Activation,
    Lstm,
    Gru,
    BiLstm,
    BiGru,
    SeBlock,
    RtaBlock,
    SpatioTemporalAttention,
    TanhAttention,
    Flatten,
    Reshape,
    Add,
    Multiply,
    Concat,
    Upsample1d,
    FitTime,
    RepeatTime,
    RepeatChannels,
    ChannelMean,
    ReverseTime,
}

/// Node counts per layer family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FamilyCounts {
    pub conv1d: usize,
    pub lstm: usize,
    pub gru: usize,
    pub bilstm: usize,
    pub bigru: usize,
    pub pooling: usize,
    pub batchnorm: usize,
    pub dropout: usize,
    pub se_block: usize,
    pub rta_block: usize,
    pub attention: usize,
}

impl FamilyCounts {
    pub fn of(kind: LayerKind) -> Self {
        let mut c = Self::default();
        match kind {
            LayerKind::Conv1d => c.conv1d = 1,
            LayerKind::Lstm => c.lstm = 1,
            LayerKind::Gru => c.gru = 1,
            LayerKind::BiLstm => c.bilstm = 1,
            LayerKind::BiGru => c.bigru = 1,
            LayerKind::MaxPool1d | LayerKind::AvgPool1d | LayerKind::GlobalAvgPool1d => {
                c.pooling = 1
            }
            LayerKind::BatchNorm => c.batchnorm = 1,
            LayerKind::Dropout => c.dropout = 1,
            LayerKind::SeBlock => c.se_block = 1,
            LayerKind::RtaBlock => c.rta_block = 1,
            LayerKind::SpatioTemporalAttention | LayerKind::TanhAttention => c.attention = 1,
            _ => {}
        }
        c
    }

    /// `(name, count)` pairs in a fixed order.
    pub fn entries(&self) -> [(&'static str, usize); 11] {
        [
            ("conv1d", self.conv1d),
            ("lstm", self.lstm),
            ("gru", self.gru),
            ("bilstm", self.bilstm),
            ("bigru", self.bigru),
            ("pooling", self.pooling),
            ("batchnorm", self.batchnorm),
            ("dropout", self.dropout),
            ("se_block", self.se_block),
            ("rta_block", self.rta_block),
            ("attention", self.attention),
        ]
    }

    /// Presence cells in the order CNN, LSTM, GRU, BiLSTM, BiGRU.
    pub fn presence(&self) -> [bool; 5] {
        [
            self.conv1d > 0,
            self.lstm > 0,
            self.gru > 0,
            self.bilstm > 0,
            self.bigru > 0,
        ]
    }
}

impl AddAssign for FamilyCounts {
    fn add_assign(&mut self, o: Self) {
        self.conv1d += o.conv1d;
        self.lstm += o.lstm;
        self.gru += o.gru;
        self.bilstm += o.bilstm;
        self.bigru += o.bigru;
        self.pooling += o.pooling;
        self.batchnorm += o.batchnorm;
        self.dropout += o.dropout;
        self.se_block += o.se_block;
        self.rta_block += o.rta_block;
        self.attention += o.attention;
    }
}

impl fmt::Display for FamilyCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries()
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentCell {
    Lstm,
    Gru,
}

/// Layer configuration, independent of input shape.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Input {
        shape: Vec<usize>,
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    Pool1d {
        kind: PoolKind,
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    Dropout {
        rate: f64,
        seed: u64,
    },
    Activation(Activation),
    Lstm {
        units: usize,
        return_sequences: bool,
    },
    Gru {
        units: usize,
        return_sequences: bool,
    },
    Bidirectional {
        cell: RecurrentCell,
        units: usize,
        return_sequences: bool,
    },
    SeBlock {
        ratio: usize,
    },
    RtaBlock {
        filters: usize,
        kernel: usize,
        pool_window: usize,
    },
    SpatioTemporalAttention {
        ratio: usize,
        kernel: usize,
    },
    TanhAttention {
        units: usize,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Add,
    Multiply,
    Concat,
    Upsample1d {
        factor: usize,
    },
    FitTime {
        length: usize,
    },
    RepeatTime {
        times: usize,
    },
    RepeatChannels {
        times: usize,
    },
    ChannelMean,
    ReverseTime,
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.01;
pub const DEFAULT_BN_EPSILON: f64 = 1e-3;

impl LayerSpec {
    pub fn conv1d(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel,
            stride: 1,
            padding: Padding::Valid,
            activation: Activation::Linear,
        }
    }

    pub fn conv1d_with(
        filters: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    ) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel,
            stride: 1,
            padding,
            activation,
        }
    }

    pub fn max_pool(window: usize) -> Self {
        LayerSpec::Pool1d {
            kind: PoolKind::Max,
            window,
            stride: window,
        }
    }

    pub fn avg_pool(window: usize, stride: usize) -> Self {
        LayerSpec::Pool1d {
            kind: PoolKind::Avg,
            window,
            stride,
        }
    }

    pub fn global_avg_pool() -> Self {
        LayerSpec::Pool1d {
            kind: PoolKind::GlobalAvg,
            window: 1,
            stride: 1,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate, seed: 0 }
    }

    pub fn lstm(units: usize, return_sequences: bool) -> Self {
        LayerSpec::Lstm {
            units,
            return_sequences,
        }
    }

    pub fn gru(units: usize, return_sequences: bool) -> Self {
        LayerSpec::Gru {
            units,
            return_sequences,
        }
    }

    pub fn bidirectional(cell: RecurrentCell, units: usize, return_sequences: bool) -> Self {
        LayerSpec::Bidirectional {
            cell,
            units,
            return_sequences,
        }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation(Activation::Relu)
    }

    /// Prefix used when auto-naming nodes.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Pool1d { kind, .. } => match kind {
                PoolKind::Max => "max_pool1d",
                PoolKind::Avg => "avg_pool1d",
                PoolKind::GlobalAvg => "global_avg_pool1d",
            },
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Gru { .. } => "gru",
            LayerSpec::Bidirectional { cell, .. } => match cell {
                RecurrentCell::Lstm => "bilstm",
                RecurrentCell::Gru => "bigru",
            },
            LayerSpec::SeBlock { .. } => "se_block",
            LayerSpec::RtaBlock { .. } => "rta_block",
            LayerSpec::SpatioTemporalAttention { .. } => "st_attention",
            LayerSpec::TanhAttention { .. } => "tanh_attention",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Add => "add",
            LayerSpec::Multiply => "multiply",
            LayerSpec::Concat => "concat",
            LayerSpec::Upsample1d { .. } => "upsample1d",
            LayerSpec::FitTime { .. } => "fit_time",
            LayerSpec::RepeatTime { .. } => "repeat_time",
            LayerSpec::RepeatChannels { .. } => "repeat_channels",
            LayerSpec::ChannelMean => "channel_mean",
            LayerSpec::ReverseTime => "reverse_time",
        }
    }

    /// Short hyperparameter summary for inspection output.
    pub fn summary(&self) -> String {
        match self {
            LayerSpec::Input { shape } => format!("shape={shape:?}"),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
                activation,
            } => format!(
                "filters={filters} kernel={kernel} stride={stride} padding={padding} activation={activation}"
            ),
            LayerSpec::Pool1d { window, stride, .. } => format!("window={window} stride={stride}"),
            LayerSpec::Dense { units, activation } => {
                format!("units={units} activation={activation}")
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                format!("momentum={momentum} epsilon={epsilon}")
            }
            LayerSpec::Dropout { rate, .. } => format!("rate={rate}"),
            LayerSpec::Activation(a) => a.to_string(),
            LayerSpec::Lstm {
                units,
                return_sequences,
            }
            | LayerSpec::Gru {
                units,
                return_sequences,
            }
            | LayerSpec::Bidirectional {
                units,
                return_sequences,
                ..
            } => format!("units={units} return_sequences={return_sequences}"),
            LayerSpec::SeBlock { ratio } => format!("ratio={ratio}"),
            LayerSpec::RtaBlock {
                filters,
                kernel,
                pool_window,
            } => format!("filters={filters} kernel={kernel} pool_window={pool_window}"),
            LayerSpec::SpatioTemporalAttention { ratio, kernel } => {
                format!("ratio={ratio} kernel={kernel}")
            }
            LayerSpec::TanhAttention { units } => format!("units={units}"),
            LayerSpec::Reshape { shape } => format!("shape={shape:?}"),
            LayerSpec::Upsample1d { factor } => format!("factor={factor}"),
            LayerSpec::FitTime { length } => format!("length={length}"),
            LayerSpec::RepeatTime { times } | LayerSpec::RepeatChannels { times } => {
                format!("times={times}")
            }
            LayerSpec::Flatten
            | LayerSpec::Add
            | LayerSpec::Multiply
            | LayerSpec::Concat
            | LayerSpec::ChannelMean
            | LayerSpec::ReverseTime => String::new(),
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            LayerSpec::Input { .. } => Some(0),
            LayerSpec::Add | LayerSpec::Concat => None,
            LayerSpec::Multiply => Some(2),
            _ => Some(1),
        }
    }

    /// Per-sample output shape for the given per-sample input shapes.
    pub fn output_shape(&self, inputs: &[Vec<usize>]) -> Result<Vec<usize>> {
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(shape_err!(
                    "{} takes {n} input(s), got {}",
                    self.tag(),
                    inputs.len()
                ))
            }
            None if inputs.is_empty() => {
                return Err(shape_err!("{} needs at least one input", self.tag()))
            }
            _ => {}
        }
        let first = inputs.first();
        let seq = |s: &[usize]| -> Result<(usize, usize)> {
            match s {
                [t, c] => Ok((*t, *c)),
                _ => Err(shape_err!(
                    "{} expects [time, channels] input, got {s:?}",
                    self.tag()
                )),
            }
        };
        match self {
            LayerSpec::Input { shape } => Ok(shape.clone()),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (t, _) = seq(first.unwrap())?;
                let t_out = conv::output_length(t, *kernel, *stride, *padding)?;
                Ok(vec![t_out, *filters])
            }
            LayerSpec::Pool1d {
                kind,
                window,
                stride,
            } => {
                let (t, c) = seq(first.unwrap())?;
                match kind {
                    PoolKind::GlobalAvg => Ok(vec![c]),
                    _ => Ok(vec![pool::output_length(t, *window, *stride)?, c]),
                }
            }
            LayerSpec::Dense { units, .. } => match first.unwrap().as_slice() {
                [_] => Ok(vec![*units]),
                s => Err(shape_err!(
                    "dense expects rank-2 [batch, features] input, got per-sample shape {s:?}; flatten first"
                )),
            },
            LayerSpec::BatchNorm { .. }
            | LayerSpec::Dropout { .. }
            | LayerSpec::Activation(_)
            | LayerSpec::ReverseTime => Ok(first.unwrap().clone()),
            LayerSpec::Lstm {
                units,
                return_sequences,
            }
            | LayerSpec::Gru {
                units,
                return_sequences,
            } => {
                let (t, _) = seq(first.unwrap())?;
                Ok(if *return_sequences {
                    vec![t, *units]
                } else {
                    vec![*units]
                })
            }
            LayerSpec::Bidirectional {
                units,
                return_sequences,
                ..
            } => {
                let (t, _) = seq(first.unwrap())?;
                Ok(if *return_sequences {
                    vec![t, 2 * units]
                } else {
                    vec![2 * units]
                })
            }
            LayerSpec::SeBlock { .. } | LayerSpec::SpatioTemporalAttention { .. } => {
                seq(first.unwrap())?;
                Ok(first.unwrap().clone())
            }
            LayerSpec::RtaBlock {
                filters,
                pool_window,
                ..
            } => {
                let (t, _) = seq(first.unwrap())?;
                pool::output_length(t, *pool_window, *pool_window)?;
                Ok(vec![t, *filters])
            }
            LayerSpec::TanhAttention { .. } => {
                let (_, c) = seq(first.unwrap())?;
                Ok(vec![c])
            }
            LayerSpec::Flatten => Ok(vec![first.unwrap().iter().product()]),
            LayerSpec::Reshape { shape } => {
                let have: usize = first.unwrap().iter().product();
                let want: usize = shape.iter().product();
                if have != want || shape.contains(&0) {
                    return Err(shape_err!(
                        "reshape {:?} -> {shape:?} changes the element count",
                        first.unwrap()
                    ));
                }
                Ok(shape.clone())
            }
            LayerSpec::Add | LayerSpec::Multiply => {
                let s = first.unwrap();
                if let Some(bad) = inputs.iter().find(|x| *x != s) {
                    return Err(shape_err!(
                        "{} operands differ in shape: {s:?} vs {bad:?}",
                        self.tag()
                    ));
                }
                Ok(s.clone())
            }
            LayerSpec::Concat => {
                let s = first.unwrap();
                let last = s.len() - 1;
                let mut total = 0;
                for x in inputs {
                    if x.len() != s.len() || x[..last] != s[..last] {
                        return Err(shape_err!(
                            "concat operands disagree outside the channel axis: {s:?} vs {x:?}"
                        ));
                    }
                    total += x[last];
                }
                let mut out = s.clone();
                out[last] = total;
                Ok(out)
            }
            LayerSpec::Upsample1d { factor } => {
                let (t, c) = seq(first.unwrap())?;
                if *factor == 0 {
                    return Err(shape_err!("upsample factor must be at least 1"));
                }
                Ok(vec![t * factor, c])
            }
            LayerSpec::FitTime { length } => {
                let (_, c) = seq(first.unwrap())?;
                if *length == 0 {
                    return Err(shape_err!("fit_time length must be positive"));
                }
                Ok(vec![*length, c])
            }
            LayerSpec::RepeatTime { times } => match first.unwrap().as_slice() {
                [c] => Ok(vec![*times, *c]),
                s => Err(shape_err!("repeat_time expects [channels], got {s:?}")),
            },
            LayerSpec::RepeatChannels { times } => match first.unwrap().as_slice() {
                [t, 1] => Ok(vec![*t, *times]),
                s => Err(shape_err!("repeat_channels expects [time, 1], got {s:?}")),
            },
            LayerSpec::ChannelMean => {
                let (t, _) = seq(first.unwrap())?;
                Ok(vec![t, 1])
            }
        }
    }

    /// Instantiates the layer with freshly initialised parameters.
    pub fn build(&self, inputs: &[Vec<usize>], rng: &mut SeededRng) -> Result<Box<dyn Layer>> {
        use rand::Rng;
        self.output_shape(inputs)?;
        let first = inputs.first().cloned().unwrap_or_default();
        let channels = first.last().copied().unwrap_or(0);
        Ok(match self {
            LayerSpec::Input { .. } => Box::new(Identity),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
                activation,
            } => Box::new(Conv1d::new(
                channels,
                *filters,
                *kernel,
                *stride,
                *padding,
                *activation,
                rng,
            )?),
            LayerSpec::Pool1d {
                kind,
                window,
                stride,
            } => Box::new(Pool1d::new(*kind, *window, *stride)?),
            LayerSpec::Dense { units, activation } => {
                Box::new(Dense::new(channels, *units, *activation, rng))
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                Box::new(BatchNorm::new(channels, *momentum, *epsilon))
            }
            LayerSpec::Dropout { rate, seed } => {
                let seed = seed ^ rng.gen::<u64>();
                Box::new(Dropout::new(*rate, seed)?)
            }
            LayerSpec::Activation(a) => Box::new(ActivationLayer::new(*a)),
            LayerSpec::Lstm {
                units,
                return_sequences,
            } => Box::new(Lstm::new(channels, *units, *return_sequences, rng)),
            LayerSpec::Gru {
                units,
                return_sequences,
            } => Box::new(Gru::new(channels, *units, *return_sequences, rng)),
            LayerSpec::Bidirectional {
                cell,
                units,
                return_sequences,
            } => Box::new(Block::bidirectional(
                &first,
                *cell,
                *units,
                *return_sequences,
                rng.gen(),
            )?),
            LayerSpec::SeBlock { ratio } => Box::new(Block::se(&first, *ratio, rng.gen())?),
            LayerSpec::RtaBlock {
                filters,
                kernel,
                pool_window,
            } => Box::new(Block::rta(&first, *filters, *kernel, *pool_window, rng.gen())?),
            LayerSpec::SpatioTemporalAttention { ratio, kernel } => Box::new(
                Block::spatiotemporal_attention(&first, *ratio, *kernel, rng.gen())?,
            ),
            LayerSpec::TanhAttention { units } => {
                Box::new(TanhAttention::new(channels, *units, rng))
            }
            LayerSpec::Flatten => Box::new(Flatten::default()),
            LayerSpec::Reshape { shape } => Box::new(Reshape::new(shape.clone())),
            LayerSpec::Add => Box::new(Add::new(inputs.len())),
            LayerSpec::Multiply => Box::new(Multiply::default()),
            LayerSpec::Concat => Box::new(Concat::new(inputs.iter().map(|s| s[s.len() - 1]).collect())),
            LayerSpec::Upsample1d { factor } => Box::new(Upsample1d::new(*factor)),
            LayerSpec::FitTime { length } => Box::new(FitTime::new(*length)),
            LayerSpec::RepeatTime { times } => Box::new(RepeatTime::new(*times)),
            LayerSpec::RepeatChannels { times } => Box::new(RepeatChannels::new(*times)),
            LayerSpec::ChannelMean => Box::new(ChannelMean::default()),
            LayerSpec::ReverseTime => Box::new(ReverseTime),
        })
    }
}

/// Glorot-style uniform limit.
pub(crate) fn fan_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn expect_rank3(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, t, c] => Ok((*b, *t, *c)),
        s => Err(shape_err!("{what} expects [batch, time, channels], got {s:?}")),
    }
}

pub(crate) fn missing_cache(what: &str) -> crate::error::Error {
    crate::error::Error::State(format!("{what}: backward called without a preceding forward"))
}

pub(crate) fn single<'a>(inputs: &[&'a Tensor], what: &str) -> Result<&'a Tensor> {
    match inputs {
        [x] => Ok(x),
        _ => Err(shape_err!("{what} takes one input, got {}", inputs.len())),
    }
}
