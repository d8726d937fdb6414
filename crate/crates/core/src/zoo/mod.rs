//! Registry of time-series architectures.
//!
//! Each entry builds an embedding graph (convolutional and/or recurrent
//! feature extractor). A [`TopModule`] can be appended to specialise the
//! embedding for forecasting, classification or anomaly detection.
//!
//! Hyperparameters such as filter counts and recurrent widths are not fixed
//! by the architectures' descriptions; [`Hyper`] holds the defaults used
//! here and can override any of them.

mod arch;
mod top;

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Model, NodeId};
use crate::layers::{FamilyCounts, RecurrentCell};

use arch::Ctx;
pub use top::{TopModule, TOP_PREFIX};

/// Name prefix of the YildirimOzal encoder nodes shared with its autoencoder.
pub const ENCODER_PREFIX: &str = "encoder_";

/// Input time extent used by [`describe`].
pub const REFERENCE_LENGTH: usize = 1000;

/// Per-build hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    /// Filter ladder; convolution `i` uses `filters[min(i, len - 1)]`.
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub first_kernel: usize,
    /// Max-pool window and stride.
    pub pool: usize,
    pub units: usize,
    pub se_ratio: usize,
    pub dropout: f64,
    /// Bidirectional flavour where the architecture allows a choice.
    pub recurrent: RecurrentCell,
    /// Tanh attention pooling after the recurrent stack, where supported.
    pub attention_head: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            filters: vec![16, 32, 64, 128],
            kernel: 3,
            first_kernel: 3,
            pool: 2,
            units: 64,
            se_ratio: 8,
            dropout: 0.2,
            recurrent: RecurrentCell::Gru,
            attention_head: false,
        }
    }
}

impl Hyper {
    /// Defaults for a registered architecture.
    pub fn for_model(name: &str) -> Result<Self> {
        let d = descriptor(name)?;
        let mut h = Hyper::default();
        match d.name {
            "LihOhShu" | "YaoQihang" => h.first_kernel = 5,
            "ExampleModel" => h.units = 20,
            _ => {}
        }
        Ok(h)
    }

    pub fn filter(&self, i: usize) -> usize {
        self.filters[i.min(self.filters.len() - 1)]
    }

    /// Applies a `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Param(format!("invalid value '{value}' for hyperparameter '{key}'"));
        let num = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        match key {
            "filters" => {
                let f = value.split(',').map(num).collect::<Result<Vec<_>>>()?;
                if f.is_empty() {
                    return Err(bad());
                }
                self.filters = f;
            }
            "kernel" => self.kernel = num(value)?,
            "first_kernel" => self.first_kernel = num(value)?,
            "pool" => self.pool = num(value)?,
            "units" => self.units = num(value)?,
            "se_ratio" => self.se_ratio = num(value)?,
            "dropout" => {
                self.dropout = value
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|r| (0.0..1.0).contains(r))
                    .ok_or_else(bad)?
            }
            "recurrent" => {
                self.recurrent = match value.trim() {
                    "lstm" => RecurrentCell::Lstm,
                    "gru" => RecurrentCell::Gru,
                    _ => return Err(bad()),
                }
            }
            "attention_head" => self.attention_head = value.trim().parse().map_err(|_| bad())?,
            _ => return Err(Error::Param(format!("unknown hyperparameter '{key}'"))),
        }
        Ok(())
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let filters: Vec<String> = self.filters.iter().map(|v| v.to_string()).collect();
        write!(
            f,
            "filters={} kernel={} first_kernel={} pool={} units={} se_ratio={} dropout={} recurrent={} attention_head={}",
            filters.join(","),
            self.kernel,
            self.first_kernel,
            self.pool,
            self.units,
            self.se_ratio,
            self.dropout,
            match self.recurrent {
                RecurrentCell::Lstm => "lstm",
                RecurrentCell::Gru => "gru",
            },
            self.attention_head
        )
    }
}

type Builder = for<'a, 'b> fn(&'a mut Ctx<'b>) -> Result<NodeId>;

/// Static facts about one architecture.
#[derive(Clone, Copy)]
pub struct ArchitectureDescriptor {
    pub name: &'static str,
    pub citation: &'static str,
    /// Number of series inputs.
    pub branches: usize,
    /// Presence of CNN, LSTM, GRU, BiLSTM, BiGRU layers in the original
    /// architecture table; `None` for the worked example.
    pub table: Option<[bool; 5]>,
    /// Family counts of the embedding under default hyperparameters.
    pub contract: FamilyCounts,
    /// Rank of the embedding output including the batch axis.
    pub output_rank: usize,
    pub structure: &'static str,
    build: Builder,
}

impl fmt::Debug for ArchitectureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ArchitectureDescriptor")
            .field("name", &self.name)
            .field("branches", &self.branches)
            .field("contract", &self.contract)
            .finish()
    }
}

#[allow(clippy::too_many_arguments)]
const fn fc(
    conv1d: usize,
    lstm: usize,
    gru: usize,
    bilstm: usize,
    bigru: usize,
    pooling: usize,
    batchnorm: usize,
    dropout: usize,
    se_block: usize,
    rta_block: usize,
    attention: usize,
) -> FamilyCounts {
    FamilyCounts {
        conv1d,
        lstm,
        gru,
        bilstm,
        bigru,
        pooling,
        batchnorm,
        dropout,
        se_block,
        rta_block,
        attention,
    }
}

const Y: bool = true;
const N: bool = false;

macro_rules! arch {
    ($name:literal, $branches:expr, $table:expr, $contract:expr, $rank:expr, $structure:literal, $build:path) => {
        ArchitectureDescriptor {
            name: $name,
            citation: $name,
            branches: $branches,
            table: $table,
            contract: $contract,
            output_rank: $rank,
            structure: $structure,
            build: $build,
        }
    };
}

// Composite blocks count their inner layers too: an SE block adds one
// global pooling, an RTA block three convolutions, three batch norms, one
// pooling and a shortcut convolution when channels change.
static REGISTRY: [ArchitectureDescriptor; 21] = [
    arch!("CaiWenjuan", 1, Some([Y, N, N, N, N]), fc(11, 0, 0, 0, 0, 4, 8, 0, 2, 0, 0), 2,
        "three parallel convolutions, two dense blocks with SE, global average pooling", arch::cai_wenjuan),
    arch!("ChenChen", 1, Some([Y, Y, N, N, N]), fc(6, 2, 0, 0, 0, 6, 0, 0, 0, 0, 0), 2,
        "6 conv + max pool, 2 LSTM", arch::chen_chen),
    arch!("FuJiangmeng", 1, Some([Y, Y, N, N, N]), fc(1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0), 2,
        "conv, max pool, LSTM", arch::fu_jiangmeng),
    arch!("GaoJunli", 1, Some([N, Y, N, N, N]), fc(0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0), 2,
        "single LSTM", arch::gao_junli),
    arch!("GenMinxing", 1, Some([N, N, N, Y, N]), fc(0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0), 2,
        "single bidirectional LSTM", arch::gen_minxing),
    arch!("HongTan", 1, Some([Y, Y, N, N, N]), fc(2, 3, 0, 0, 0, 2, 0, 0, 0, 0, 0), 2,
        "2 conv + max pool, 3 LSTM", arch::hong_tan),
    arch!("HtetMyetLynn", 1, Some([Y, N, N, Y, Y]), fc(4, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0), 2,
        "4 conv, bidirectional GRU or LSTM", arch::htet_myet_lynn),
    arch!("HuangMeiLing", 1, Some([Y, N, N, N, N]), fc(2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0), 3,
        "2 conv + max pool", arch::huang_mei_ling),
    arch!("KhanZulfiqar", 1, Some([Y, N, Y, N, N]), fc(2, 0, 2, 0, 0, 0, 0, 2, 0, 0, 0), 2,
        "2 conv + dropout, 2 GRU", arch::khan_zulfiqar),
    arch!("KimTaeYoung", 1, Some([Y, Y, N, N, N]), fc(2, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0), 2,
        "2 conv + max pool, LSTM", arch::kim_tae_young),
    arch!("KongZhengmin", 1, Some([Y, Y, N, N, N]), fc(1, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0), 2,
        "conv, max pool, 2 LSTM", arch::kong_zhengmin),
    arch!("LihOhShu", 1, Some([Y, Y, N, N, N]), fc(5, 1, 0, 0, 0, 5, 0, 0, 0, 0, 0), 2,
        "5 conv + max pool, LSTM", arch::lih_oh_shu),
    arch!("OhShuLih", 1, Some([Y, Y, N, N, N]), fc(3, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0), 2,
        "3 full conv with max pool between, LSTM", arch::oh_shu_lih),
    arch!("ShiHaotian", 3, Some([Y, Y, N, N, N]), fc(3, 1, 0, 0, 0, 3, 0, 0, 0, 0, 0), 2,
        "3 inputs each conv + max pool, concat, LSTM", arch::shi_haotian),
    arch!("WangKejun", 1, Some([Y, Y, N, N, N]), fc(2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0), 3,
        "2 LSTM then 2 conv", arch::wang_kejun),
    arch!("WeiXiaoyan", 1, Some([Y, Y, N, N, N]), fc(5, 2, 0, 0, 0, 5, 6, 0, 0, 0, 0), 2,
        "5 blocks conv, leaky relu, max pool, batch norm; LSTM, batch norm, LSTM", arch::wei_xiaoyan),
    arch!("YaoQihang", 1, Some([Y, Y, N, N, N]), fc(13, 2, 0, 0, 0, 5, 13, 0, 0, 0, 0), 2,
        "13 conv + batch norm + relu in 5 pooled blocks, 2 LSTM", arch::yao_qihang),
    arch!("YiboGao", 1, Some([Y, N, N, N, N]), fc(12, 0, 0, 0, 0, 5, 9, 0, 0, 3, 0), 3,
        "3 RTA blocks with max pool between", arch::yibo_gao),
    arch!("YildirimOzal", 1, Some([Y, Y, N, N, N]), fc(2, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0), 2,
        "convolutional encoder (autoencoder-pretrained), LSTM", arch::yildirim_ozal),
    arch!("ZhangJin", 1, Some([Y, N, N, N, Y]), fc(5, 0, 0, 0, 1, 5, 0, 0, 0, 0, 2), 2,
        "conv + max pool with spatio-temporal attention, bidirectional GRU", arch::zhang_jin),
    arch!("ZhengZhenyu", 1, Some([Y, Y, N, N, N]), fc(6, 1, 0, 0, 0, 3, 6, 0, 0, 0, 0), 2,
        "3 blocks of 2 conv + batch norm and max pool, LSTM", arch::zheng_zhenyu),
];

static EXAMPLE: ArchitectureDescriptor = arch!(
    "ExampleModel", 1, None, fc(2, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0), 2,
    "HuangMeiLing embedding followed by LSTM(20)", arch::example_model
);

/// All architectures: the 21 catalogue entries then the worked example.
pub fn list_models() -> Vec<&'static ArchitectureDescriptor> {
    REGISTRY.iter().chain(std::iter::once(&EXAMPLE)).collect()
}

pub fn descriptor(name: &str) -> Result<&'static ArchitectureDescriptor> {
    list_models()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))
}

fn inputs(g: &mut GraphBuilder, branches: usize, shape: &[usize]) -> Result<Vec<NodeId>> {
    if branches == 1 {
        return Ok(vec![g.input("input", shape)?]);
    }
    (1..=branches).map(|i| g.input(&format!("input_{i}"), shape)).collect()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    match shape {
        [t, c] if *t > 0 && *c > 0 => Ok(()),
        s => Err(Error::Shape(format!("input shape must be [time, channels], got {s:?}"))),
    }
}

fn assemble(
    d: &ArchitectureDescriptor,
    shape: &[usize],
    hyper: &Hyper,
    top: Option<&TopModule>,
) -> Result<(GraphBuilder, NodeId)> {
    let mut g = GraphBuilder::new();
    let ins = inputs(&mut g, d.branches, shape)?;
    let mut ctx = Ctx {
        g,
        inputs: ins,
        h: hyper,
        prefix: "",
    };
    let mut out = (d.build)(&mut ctx)?;
    if let Some(top) = top {
        out = top.attach(&mut ctx.g, out)?;
    }
    Ok((ctx.g, out))
}

/// Smallest time extent the architecture accepts with `channels` channels.
pub fn min_input_length(name: &str, channels: usize, hyper: &Hyper) -> Result<usize> {
    let d = descriptor(name)?;
    const LIMIT: usize = 1 << 16;
    (1..=LIMIT)
        .find(|&t| assemble(d, &[t, channels], hyper, None).is_ok())
        .ok_or_else(|| Error::Shape(format!("{name} accepts no input length up to {LIMIT}")))
}

fn assemble_checked(
    d: &ArchitectureDescriptor,
    shape: &[usize],
    hyper: &Hyper,
    top: Option<&TopModule>,
) -> Result<(GraphBuilder, NodeId)> {
    check_shape(shape)?;
    match assemble(d, shape, hyper, None) {
        Ok(_) => {}
        Err(Error::Shape(msg)) => {
            let min = min_input_length(d.name, shape[1], hyper)?;
            if shape[0] < min {
                return Err(Error::Shape(format!(
                    "input length {} is below the minimum {min} for {}",
                    shape[0], d.name
                )));
            }
            return Err(Error::Shape(msg));
        }
        Err(e) => return Err(e),
    }
    assemble(d, shape, hyper, top)
}

/// Builds `name` with its default hyperparameters.
pub fn build_model(name: &str, input_shape: &[usize], top: Option<&TopModule>, seed: u64) -> Result<Model> {
    build_model_with(name, input_shape, &Hyper::for_model(name)?, top, seed)
}

pub fn build_model_with(
    name: &str,
    input_shape: &[usize],
    hyper: &Hyper,
    top: Option<&TopModule>,
    seed: u64,
) -> Result<Model> {
    let d = descriptor(name)?;
    let (g, out) = assemble_checked(d, input_shape, hyper, top)?;
    g.build(out, seed)
}

/// The reconstruction graph that pretrains the YildirimOzal encoder.
///
/// Encoder nodes share their names with the classifier from
/// [`build_model`], so weights transfer by name.
pub fn yildirim_autoencoder(input_shape: &[usize], hyper: &Hyper, seed: u64) -> Result<Model> {
    let d = descriptor("YildirimOzal")?;
    assemble_checked(d, input_shape, hyper, None)?;
    let mut g = GraphBuilder::new();
    let ins = inputs(&mut g, 1, input_shape)?;
    let mut ctx = Ctx {
        g,
        inputs: ins,
        h: hyper,
        prefix: "",
    };
    let out = arch::yildirim_autoencoder(&mut ctx, input_shape[0], input_shape[1])?;
    ctx.g.build(out, seed)
}

/// Inspection record for one node.
#[derive(Debug, Clone)]
pub struct NodeSummary {
    pub name: String,
    pub layer: String,
    pub hyper: String,
    pub shape: Vec<usize>,
    pub params: usize,
}

/// Descriptor plus what building it at the reference input reveals.
#[derive(Debug, Clone)]
pub struct Description {
    pub descriptor: &'static ArchitectureDescriptor,
    pub hyper: Hyper,
    pub input_shape: Vec<usize>,
    pub contract: FamilyCounts,
    pub output_shape: Vec<usize>,
    pub param_count: usize,
    pub min_input_length: usize,
    pub nodes: Vec<NodeSummary>,
}

pub fn describe(name: &str) -> Result<Description> {
    describe_with(name, &Hyper::for_model(name)?)
}

pub fn describe_with(name: &str, hyper: &Hyper) -> Result<Description> {
    let d = descriptor(name)?;
    let input_shape = vec![REFERENCE_LENGTH, 1];
    let model = build_model_with(name, &input_shape, hyper, None, 0)?;
    Ok(Description {
        descriptor: d,
        hyper: hyper.clone(),
        contract: model.families(),
        output_shape: model.output_shape().to_vec(),
        param_count: model.param_count(),
        min_input_length: min_input_length(name, 1, hyper)?,
        nodes: model
            .nodes()
            .map(|n| NodeSummary {
                name: n.name.to_string(),
                layer: n.spec.tag().to_string(),
                hyper: n.spec.summary(),
                shape: n.shape.to_vec(),
                params: n.param_count,
            })
            .collect(),
        input_shape,
    })
}

fn dims(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.descriptor;
        writeln!(f, "name: {}", d.name)?;
        writeln!(f, "citation: {}", d.citation)?;
        writeln!(f, "structure: {}", d.structure)?;
        writeln!(f, "branches: {}", d.branches)?;
        writeln!(f, "contract: {}", self.contract)?;
        writeln!(f, "hyper: {}", self.hyper)?;
        writeln!(f, "input_shape: {}", dims(&self.input_shape))?;
        writeln!(f, "output_shape: {}", dims(&self.output_shape))?;
        writeln!(f, "min_input_length: {}", self.min_input_length)?;
        writeln!(f, "parameters: {}", self.param_count)?;
        for n in &self.nodes {
            write!(f, "node: {} layer={} shape={} params={}", n.name, n.layer, dims(&n.shape), n.params)?;
            if !n.hyper.is_empty() {
                write!(f, " {}", n.hyper)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One-line registry entry.
pub fn list_line(d: &ArchitectureDescriptor) -> String {
    format!(
        "name: {} branches: {} output_rank: {} contract: {}",
        d.name,
        d.branches,
        d.output_rank,
        d.contract
    )
}
