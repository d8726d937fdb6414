//! Composite layers implemented as small internal graphs.

use super::{
    Activation, Backward, FamilyCounts, Layer, LayerKind, LayerSpec, Mode, Padding, RecurrentCell,
};
use crate::error::{shape_err, Result};
use crate::graph::{GraphBuilder, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Block {
    kind: LayerKind,
    families: FamilyCounts,
    model: Model,
}

fn seq_shape(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [t, c] => Ok((*t, *c)),
        s => Err(shape_err!("{what} expects [time, channels] input, got {s:?}")),
    }
}

fn same_conv(filters: usize, kernel: usize, activation: Activation) -> LayerSpec {
    LayerSpec::conv1d_with(filters, kernel, Padding::Same, activation)
}

impl Block {
    fn wrap(kind: LayerKind, model: Model, count_inner: bool) -> Self {
        let mut families = FamilyCounts::of(kind);
        if count_inner {
            families += model.families();
        }
        Self {
            kind,
            families,
            model,
        }
    }

    /// Forward and time-reversed recurrences concatenated on channels.
    pub fn bidirectional(
        shape: &[usize],
        cell: RecurrentCell,
        units: usize,
        return_sequences: bool,
        seed: u64,
    ) -> Result<Self> {
        seq_shape(shape, "bidirectional")?;
        let rnn = match cell {
            RecurrentCell::Lstm => LayerSpec::lstm(units, return_sequences),
            RecurrentCell::Gru => LayerSpec::gru(units, return_sequences),
        };
        let mut g = GraphBuilder::new();
        let x = g.input("x", shape)?;
        let fwd = g.add_named("forward", rnn.clone(), &[x])?;
        let rev = g.add_named("reverse_in", LayerSpec::ReverseTime, &[x])?;
        let mut bwd = g.add_named("backward", rnn, &[rev])?;
        if return_sequences {
            bwd = g.add_named("reverse_out", LayerSpec::ReverseTime, &[bwd])?;
        }
        let out = g.add_named("concat", LayerSpec::Concat, &[fwd, bwd])?;
        let kind = match cell {
            RecurrentCell::Lstm => LayerKind::BiLstm,
            RecurrentCell::Gru => LayerKind::BiGru,
        };
        Ok(Self::wrap(kind, g.build(out, seed)?, false))
    }

    /// Squeeze-and-excitation channel reweighting.
    pub fn se(shape: &[usize], ratio: usize, seed: u64) -> Result<Self> {
        let mut g = GraphBuilder::new();
        let x = g.input("x", shape)?;
        let out = squeeze_excite(&mut g, x, shape, ratio)?;
        Ok(Self::wrap(LayerKind::SeBlock, g.build(out, seed)?, true))
    }

    /// Residual block with a pooled, upsampled attention mask:
    /// `trunk + trunk * mask + shortcut`.
    pub fn rta(
        shape: &[usize],
        filters: usize,
        kernel: usize,
        pool_window: usize,
        seed: u64,
    ) -> Result<Self> {
        let (t, c) = seq_shape(shape, "rta_block")?;
        let mut g = GraphBuilder::new();
        let x = g.input("x", shape)?;
        let trunk = g.chain(
            x,
            [
                same_conv(filters, kernel, Activation::Linear),
                LayerSpec::batch_norm(),
                LayerSpec::relu(),
                same_conv(filters, kernel, Activation::Linear),
                LayerSpec::batch_norm(),
                LayerSpec::relu(),
            ],
        )?;
        let mask = g.chain(
            trunk,
            [
                LayerSpec::max_pool(pool_window),
                same_conv(filters, kernel, Activation::Linear),
                LayerSpec::batch_norm(),
                LayerSpec::relu(),
                LayerSpec::Upsample1d {
                    factor: pool_window,
                },
                LayerSpec::FitTime { length: t },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
        )?;
        let gated = g.add(LayerSpec::Multiply, &[trunk, mask])?;
        let shortcut = if c == filters {
            x
        } else {
            g.add_named("shortcut", same_conv(filters, 1, Activation::Linear), &[x])?
        };
        let out = g.add(LayerSpec::Add, &[trunk, gated, shortcut])?;
        Ok(Self::wrap(LayerKind::RtaBlock, g.build(out, seed)?, true))
    }

    /// Channel attention followed by a per-step temporal mask.
    pub fn spatiotemporal_attention(
        shape: &[usize],
        ratio: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        let (_, c) = seq_shape(shape, "st_attention")?;
        let mut g = GraphBuilder::new();
        let x = g.input("x", shape)?;
        let spatial = squeeze_excite(&mut g, x, shape, ratio)?;
        let mask = g.chain(
            spatial,
            [
                LayerSpec::ChannelMean,
                same_conv(1, kernel, Activation::Sigmoid),
                LayerSpec::RepeatChannels { times: c },
            ],
        )?;
        let out = g.add(LayerSpec::Multiply, &[spatial, mask])?;
        Ok(Self::wrap(
            LayerKind::SpatioTemporalAttention,
            g.build(out, seed)?,
            true,
        ))
    }

    pub fn inner(&self) -> &Model {
        &self.model
    }
}

fn squeeze_excite(
    g: &mut GraphBuilder,
    x: crate::graph::NodeId,
    shape: &[usize],
    ratio: usize,
) -> Result<crate::graph::NodeId> {
    let (t, c) = seq_shape(shape, "se_block")?;
    if ratio == 0 {
        return Err(shape_err!("squeeze ratio must be at least 1"));
    }
    let weights = g.chain(
        x,
        [
            LayerSpec::global_avg_pool(),
            LayerSpec::dense((c / ratio).max(1), Activation::Relu),
            LayerSpec::dense(c, Activation::Sigmoid),
            LayerSpec::RepeatTime { times: t },
        ],
    )?;
    g.add(LayerSpec::Multiply, &[x, weights])
}

impl Layer for Block {
    fn kind(&self) -> LayerKind {
        self.kind
    }

    fn families(&self) -> FamilyCounts {
        self.families
    }

    fn forward(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor> {
        self.model.forward_mode(inputs, mode)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.model.predict(inputs)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let mut g = self.model.backward(grad)?;
        let names: Vec<String> = self.model.params().into_iter().map(|(n, _)| n).collect();
        let params = names
            .iter()
            .map(|n| g.params.swap_remove(n).expect("inner graphs are never frozen"))
            .collect();
        Ok(Backward {
            inputs: g.inputs,
            params,
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.model.params_mut()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.model.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.model.buffers_mut()
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.model.state_mut()
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
