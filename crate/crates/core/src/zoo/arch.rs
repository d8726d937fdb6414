//! Embedding builders, one per registered architecture.

use super::{Hyper, ENCODER_PREFIX};
use crate::error::Result;
use crate::graph::{GraphBuilder, NodeId};
use crate::layers::{Activation, LayerSpec, Padding, RecurrentCell};

pub(crate) struct Ctx<'a> {
    pub g: GraphBuilder,
    pub inputs: Vec<NodeId>,
    pub h: &'a Hyper,
    pub prefix: &'static str,
}

impl Ctx<'_> {
    fn add(&mut self, spec: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        self.g.add_prefixed(self.prefix, spec, inputs)
    }

    fn then(&mut self, at: NodeId, spec: LayerSpec) -> Result<NodeId> {
        self.add(spec, &[at])
    }

    fn conv(&mut self, at: NodeId, filters: usize, kernel: usize, padding: Padding) -> Result<NodeId> {
        self.then(at, LayerSpec::conv1d_with(filters, kernel, padding, Activation::Relu))
    }

    fn conv_linear(&mut self, at: NodeId, filters: usize, kernel: usize, padding: Padding) -> Result<NodeId> {
        self.then(at, LayerSpec::conv1d_with(filters, kernel, padding, Activation::Linear))
    }

    fn pool(&mut self, at: NodeId) -> Result<NodeId> {
        let w = self.h.pool;
        self.then(at, LayerSpec::max_pool(w))
    }

    fn lstm(&mut self, at: NodeId, return_sequences: bool) -> Result<NodeId> {
        let u = self.h.units;
        self.then(at, LayerSpec::lstm(u, return_sequences))
    }

    fn gru(&mut self, at: NodeId, return_sequences: bool) -> Result<NodeId> {
        let u = self.h.units;
        self.then(at, LayerSpec::gru(u, return_sequences))
    }

    fn kernel_at(&self, i: usize) -> usize {
        if i == 0 {
            self.h.first_kernel
        } else {
            self.h.kernel
        }
    }

    /// `n` blocks of valid conv + max pool with the filter ladder.
    fn conv_pool_stack(&mut self, mut at: NodeId, n: usize) -> Result<NodeId> {
        for i in 0..n {
            at = self.conv(at, self.h.filter(i), self.kernel_at(i), Padding::Valid)?;
            at = self.pool(at)?;
        }
        Ok(at)
    }
}

pub(crate) fn cai_wenjuan(c: &mut Ctx) -> Result<NodeId> {
    let x = c.inputs[0];
    let growth = c.h.filter(0);
    let k = c.h.kernel;
    let branches = [k, k + 2, k + 4]
        .into_iter()
        .map(|kk| c.conv(x, growth, kk, Padding::Same))
        .collect::<Result<Vec<_>>>()?;
    let mut at = c.add(LayerSpec::Concat, &branches)?;
    for block in 0..2 {
        if block > 0 {
            at = c.pool(at)?;
        }
        for _ in 0..4 {
            let bn = c.then(at, LayerSpec::batch_norm())?;
            let act = c.then(bn, LayerSpec::relu())?;
            let new = c.conv_linear(act, growth, k, Padding::Same)?;
            at = c.add(LayerSpec::Concat, &[at, new])?;
        }
        at = c.then(at, LayerSpec::SeBlock { ratio: c.h.se_ratio })?;
    }
    c.then(at, LayerSpec::global_avg_pool())
}

pub(crate) fn chen_chen(c: &mut Ctx) -> Result<NodeId> {
    let at = c.conv_pool_stack(c.inputs[0], 6)?;
    let at = c.lstm(at, true)?;
    c.lstm(at, false)
}

pub(crate) fn fu_jiangmeng(c: &mut Ctx) -> Result<NodeId> {
    let at = c.conv_pool_stack(c.inputs[0], 1)?;
    c.lstm(at, false)
}

pub(crate) fn gao_junli(c: &mut Ctx) -> Result<NodeId> {
    c.lstm(c.inputs[0], false)
}

pub(crate) fn gen_minxing(c: &mut Ctx) -> Result<NodeId> {
    let u = c.h.units;
    c.then(c.inputs[0], LayerSpec::bidirectional(RecurrentCell::Lstm, u, false))
}

pub(crate) fn hong_tan(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.conv_pool_stack(c.inputs[0], 2)?;
    at = c.lstm(at, true)?;
    at = c.lstm(at, true)?;
    c.lstm(at, false)
}

pub(crate) fn htet_myet_lynn(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..4 {
        at = c.conv(at, c.h.filter(i), c.kernel_at(i), Padding::Valid)?;
    }
    let (cell, u) = (c.h.recurrent, c.h.units);
    c.then(at, LayerSpec::bidirectional(cell, u, false))
}

pub(crate) fn huang_mei_ling(c: &mut Ctx) -> Result<NodeId> {
    c.conv_pool_stack(c.inputs[0], 2)
}

pub(crate) fn khan_zulfiqar(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..2 {
        at = c.conv(at, c.h.filter(i), c.kernel_at(i), Padding::Valid)?;
        at = c.then(at, LayerSpec::dropout(c.h.dropout))?;
    }
    at = c.gru(at, true)?;
    c.gru(at, false)
}

pub(crate) fn kim_tae_young(c: &mut Ctx) -> Result<NodeId> {
    let at = c.conv_pool_stack(c.inputs[0], 2)?;
    c.lstm(at, false)
}

pub(crate) fn kong_zhengmin(c: &mut Ctx) -> Result<NodeId> {
    let at = c.conv_pool_stack(c.inputs[0], 1)?;
    let at = c.lstm(at, true)?;
    c.lstm(at, false)
}

pub(crate) fn lih_oh_shu(c: &mut Ctx) -> Result<NodeId> {
    let at = c.conv_pool_stack(c.inputs[0], 5)?;
    c.lstm(at, false)
}

pub(crate) fn oh_shu_lih(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..3 {
        at = c.conv(at, c.h.filter(i), c.kernel_at(i), Padding::Full)?;
        if i < 2 {
            at = c.pool(at)?;
        }
    }
    c.lstm(at, false)
}

pub(crate) fn shi_haotian(c: &mut Ctx) -> Result<NodeId> {
    let mut branches = Vec::new();
    for x in c.inputs.clone() {
        let at = c.conv(x, c.h.filter(0), c.h.kernel, Padding::Same)?;
        branches.push(c.pool(at)?);
    }
    let at = c.add(LayerSpec::Concat, &branches)?;
    c.lstm(at, false)
}

pub(crate) fn wang_kejun(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.lstm(c.inputs[0], true)?;
    at = c.lstm(at, true)?;
    at = c.conv(at, c.h.filter(0), c.h.kernel, Padding::Valid)?;
    c.conv(at, c.h.filter(1), c.h.kernel, Padding::Valid)
}

pub(crate) fn wei_xiaoyan(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..5 {
        at = c.conv_linear(at, c.h.filter(i), c.kernel_at(i), Padding::Valid)?;
        at = c.then(at, LayerSpec::Activation(Activation::LeakyRelu(0.3)))?;
        at = c.pool(at)?;
        at = c.then(at, LayerSpec::batch_norm())?;
    }
    at = c.lstm(at, true)?;
    at = c.then(at, LayerSpec::batch_norm())?;
    c.lstm(at, false)
}

/// Convolutions per pooled block; 13 in total.
pub(crate) const YAO_GROUPS: [usize; 5] = [2, 2, 3, 3, 3];

pub(crate) fn yao_qihang(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    let mut n = 0;
    for (block, &convs) in YAO_GROUPS.iter().enumerate() {
        for _ in 0..convs {
            at = c.conv_linear(at, c.h.filter(block), c.kernel_at(n), Padding::Valid)?;
            at = c.then(at, LayerSpec::batch_norm())?;
            at = c.then(at, LayerSpec::relu())?;
            n += 1;
        }
        at = c.pool(at)?;
    }
    at = c.lstm(at, true)?;
    if c.h.attention_head {
        at = c.lstm(at, true)?;
        let u = c.h.units;
        c.then(at, LayerSpec::TanhAttention { units: u })
    } else {
        c.lstm(at, false)
    }
}

pub(crate) fn yibo_gao(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..3 {
        if i > 0 {
            at = c.pool(at)?;
        }
        let spec = LayerSpec::RtaBlock {
            filters: c.h.filter(i),
            kernel: c.h.kernel,
            pool_window: c.h.pool,
        };
        at = c.then(at, spec)?;
    }
    Ok(at)
}

pub(crate) fn yildirim_encoder(c: &mut Ctx) -> Result<NodeId> {
    let saved = c.prefix;
    c.prefix = ENCODER_PREFIX;
    let mut at = c.inputs[0];
    for i in 0..2 {
        at = c.conv(at, c.h.filter(i), c.h.kernel, Padding::Same)?;
        at = c.pool(at)?;
    }
    c.prefix = saved;
    Ok(at)
}

pub(crate) fn yildirim_ozal(c: &mut Ctx) -> Result<NodeId> {
    let at = yildirim_encoder(c)?;
    c.lstm(at, false)
}

/// Mirror of the encoder ending in a reconstruction of the input shape.
pub(crate) fn yildirim_autoencoder(c: &mut Ctx, time: usize, channels: usize) -> Result<NodeId> {
    let mut at = yildirim_encoder(c)?;
    c.prefix = "decoder_";
    for i in (0..2).rev() {
        at = c.then(at, LayerSpec::Upsample1d { factor: c.h.pool })?;
        at = c.conv(at, c.h.filter(i), c.h.kernel, Padding::Same)?;
    }
    at = c.conv_linear(at, channels, c.h.kernel, Padding::Same)?;
    at = c.then(at, LayerSpec::FitTime { length: time })?;
    c.prefix = "";
    Ok(at)
}

pub(crate) fn zhang_jin(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for i in 0..3 {
        at = c.conv(at, c.h.filter(i), c.kernel_at(i), Padding::Valid)?;
        at = c.pool(at)?;
        if i < 2 {
            let spec = LayerSpec::SpatioTemporalAttention {
                ratio: c.h.se_ratio,
                kernel: c.h.kernel,
            };
            at = c.then(at, spec)?;
        }
    }
    let u = c.h.units;
    c.then(at, LayerSpec::bidirectional(RecurrentCell::Gru, u, false))
}

pub(crate) fn zheng_zhenyu(c: &mut Ctx) -> Result<NodeId> {
    let mut at = c.inputs[0];
    for block in 0..3 {
        for j in 0..2 {
            let k = if block == 0 && j == 0 { c.h.first_kernel } else { c.h.kernel };
            at = c.conv(at, c.h.filter(block), k, Padding::Valid)?;
            at = c.then(at, LayerSpec::batch_norm())?;
        }
        at = c.pool(at)?;
    }
    c.lstm(at, false)
}

pub(crate) fn example_model(c: &mut Ctx) -> Result<NodeId> {
    let at = huang_mei_ling(c)?;
    c.lstm(at, false)
}
