use std::fmt;

use super::{missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// Normalises over the last axis.
    Softmax,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Linear => write!(f, "linear"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Softmax => write!(f, "softmax"),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Applies the activation in place; `row` is the extent of the last axis.
    pub fn apply(&self, data: &mut [f64], row: usize) {
        match *self {
            Activation::Linear => {}
            Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::LeakyRelu(slope) => data
                .iter_mut()
                .for_each(|v| *v = if *v >= 0.0 { *v } else { slope * *v }),
            Activation::Sigmoid => data.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                for chunk in data.chunks_mut(row) {
                    let m = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in chunk.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    chunk.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
    }

    /// Turns an upstream gradient into a pre-activation gradient in place,
    /// given the activation's output.
    pub fn backprop(&self, out: &[f64], grad: &mut [f64], row: usize) {
        match *self {
            Activation::Linear => {}
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::LeakyRelu(slope) => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    if y < 0.0 || (y == 0.0 && slope != 0.0) {
                        *g *= slope;
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= y * (1.0 - y);
                }
            }
            Activation::Tanh => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Softmax => {
                for (gc, yc) in grad.chunks_mut(row).zip(out.chunks(row)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(g, y)| g * y).sum();
                    for (g, &y) in gc.iter_mut().zip(yc) {
                        *g = y * (*g - dot);
                    }
                }
            }
        }
    }

    pub(crate) fn apply_tensor(&self, x: Tensor) -> Tensor {
        if *self == Activation::Linear {
            return x;
        }
        let row = *x.shape().last().unwrap();
        let mut x = x;
        self.apply(x.data_mut(), row);
        x
    }
}

/// Standalone activation node.
#[derive(Debug, Clone)]
pub struct ActivationLayer {
    activation: Activation,
    out: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            out: None,
        }
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Activation
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let y = self.infer(inputs)?;
        self.out = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "activation")?;
        Ok(self.activation.apply_tensor(x.clone()))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let out = self.out.take().ok_or_else(|| missing_cache("activation"))?;
        let mut g = grad.clone();
        let row = *out.shape().last().unwrap();
        self.activation.backprop(out.data(), g.data_mut(), row);
        Ok(Backward {
            inputs: vec![g],
            params: vec![],
        })
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
