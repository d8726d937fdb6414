//! Parameter-free layers that move, combine, or expand values.

use super::{expect_rank3, missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn grads(inputs: Vec<Tensor>) -> Backward {
    Backward {
        inputs,
        params: vec![],
    }
}

macro_rules! boilerplate {
    ($kind:expr) => {
        fn kind(&self) -> LayerKind {
            $kind
        }

        fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
            let y = self.infer(inputs)?;
            self.cache = Some(inputs.iter().map(|x| x.shape().to_vec()).collect());
            Ok(y)
        }

        fn clone_box(&self) -> Box<dyn Layer> {
            Box::new(self.clone())
        }
    };
}

/// Pass-through used for graph inputs.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl Layer for Identity {
    fn kind(&self) -> LayerKind {
        LayerKind::Input
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        self.infer(inputs)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(single(inputs, "identity")?.clone())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        Ok(grads(vec![grad.clone()]))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(*self)
    }
}

/// Collapses all per-sample axes into one.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache: Option<Vec<Vec<usize>>>,
}

impl Layer for Flatten {
    boilerplate!(LayerKind::Flatten);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "flatten")?;
        let b = x.shape()[0];
        x.reshape(&[b, x.len() / b])
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        Ok(grads(vec![grad.reshape(&shapes[0])?]))
    }
}

/// Reinterprets each sample with a new per-sample shape.
#[derive(Debug, Clone)]
pub struct Reshape {
    shape: Vec<usize>,
    cache: Option<Vec<Vec<usize>>>,
}

impl Reshape {
    pub fn new(shape: Vec<usize>) -> Self {
        Self { shape, cache: None }
    }
}

impl Layer for Reshape {
    boilerplate!(LayerKind::Reshape);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "reshape")?;
        let mut full = vec![x.shape()[0]];
        full.extend_from_slice(&self.shape);
        x.reshape(&full)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("reshape"))?;
        Ok(grads(vec![grad.reshape(&shapes[0])?]))
    }
}

/// Elementwise sum of same-shaped inputs.
#[derive(Debug, Clone)]
pub struct Add {
    arity: usize,
    cache: Option<Vec<Vec<usize>>>,
}

impl Add {
    pub fn new(arity: usize) -> Self {
        Self { arity, cache: None }
    }
}

impl Layer for Add {
    boilerplate!(LayerKind::Add);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.arity {
            return Err(shape_err!("add takes {} inputs, got {}", self.arity, inputs.len()));
        }
        let mut acc = inputs[0].clone();
        for x in &inputs[1..] {
            acc.add_assign(x)?;
        }
        Ok(acc)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("add"))?;
        Ok(grads(vec![grad.clone(); shapes.len()]))
    }
}

/// Elementwise product of two same-shaped inputs.
#[derive(Debug, Clone, Default)]
pub struct Multiply {
    operands: Option<(Tensor, Tensor)>,
}

impl Layer for Multiply {
    fn kind(&self) -> LayerKind {
        LayerKind::Multiply
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let y = self.infer(inputs)?;
        self.operands = Some((inputs[0].clone(), inputs[1].clone()));
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match inputs {
            [a, b] => a.mul(b),
            _ => Err(shape_err!("multiply takes 2 inputs, got {}", inputs.len())),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let (a, b) = self.operands.take().ok_or_else(|| missing_cache("multiply"))?;
        Ok(grads(vec![grad.mul(&b)?, grad.mul(&a)?]))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Joins inputs along the last axis.
#[derive(Debug, Clone)]
pub struct Concat {
    widths: Vec<usize>,
    cache: Option<Vec<Vec<usize>>>,
}

impl Concat {
    pub fn new(widths: Vec<usize>) -> Self {
        Self { widths, cache: None }
    }
}

impl Layer for Concat {
    boilerplate!(LayerKind::Concat);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.widths.len() {
            return Err(shape_err!(
                "concat takes {} inputs, got {}",
                self.widths.len(),
                inputs.len()
            ));
        }
        Tensor::concat(inputs, inputs[0].rank() - 1)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        self.cache.take().ok_or_else(|| missing_cache("concat"))?;
        let axis = grad.rank() - 1;
        let mut start = 0;
        let mut out = Vec::with_capacity(self.widths.len());
        for &w in &self.widths {
            out.push(grad.crop(axis, start, w)?);
            start += w;
        }
        Ok(grads(out))
    }
}

/// Repeats every time step `factor` times.
#[derive(Debug, Clone)]
pub struct Upsample1d {
    factor: usize,
    cache: Option<Vec<Vec<usize>>>,
}

impl Upsample1d {
    pub fn new(factor: usize) -> Self {
        Self {
            factor,
            cache: None,
        }
    }
}

impl Layer for Upsample1d {
    boilerplate!(LayerKind::Upsample1d);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "upsample1d")?;
        let (b, t, c) = expect_rank3(x, "upsample1d")?;
        let mut out = Vec::with_capacity(x.len() * self.factor);
        for row in x.data().chunks(c) {
            for _ in 0..self.factor {
                out.extend_from_slice(row);
            }
        }
        Tensor::new(&[b, t * self.factor, c], out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("upsample1d"))?;
        let c = shapes[0][2];
        let mut dx = vec![0.0; shapes[0].iter().product()];
        for (i, row) in grad.data().chunks(c).enumerate() {
            let dst = &mut dx[(i / self.factor) * c..][..c];
            for (d, g) in dst.iter_mut().zip(row) {
                *d += g;
            }
        }
        Ok(grads(vec![Tensor::new(&shapes[0], dx)?]))
    }
}

/// Crops or zero-pads the end of the time axis to a fixed length.
#[derive(Debug, Clone)]
pub struct FitTime {
    length: usize,
    cache: Option<Vec<Vec<usize>>>,
}

impl FitTime {
    pub fn new(length: usize) -> Self {
        Self {
            length,
            cache: None,
        }
    }
}

fn fit_axis1(x: &Tensor, length: usize) -> Result<Tensor> {
    let t = x.shape()[1];
    if t >= length {
        x.crop(1, 0, length)
    } else {
        x.pad(1, 0, length - t, 0.0)
    }
}

impl Layer for FitTime {
    boilerplate!(LayerKind::FitTime);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "fit_time")?;
        expect_rank3(x, "fit_time")?;
        fit_axis1(x, self.length)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("fit_time"))?;
        Ok(grads(vec![fit_axis1(grad, shapes[0][1])?]))
    }
}

/// `[batch, channels]` to `[batch, times, channels]`.
#[derive(Debug, Clone)]
pub struct RepeatTime {
    times: usize,
    cache: Option<Vec<Vec<usize>>>,
}

impl RepeatTime {
    pub fn new(times: usize) -> Self {
        Self { times, cache: None }
    }
}

impl Layer for RepeatTime {
    boilerplate!(LayerKind::RepeatTime);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "repeat_time")?;
        let (b, c) = match x.shape() {
            [b, c] => (*b, *c),
            s => return Err(shape_err!("repeat_time expects [batch, channels], got {s:?}")),
        };
        let mut out = Vec::with_capacity(b * self.times * c);
        for row in x.data().chunks(c) {
            for _ in 0..self.times {
                out.extend_from_slice(row);
            }
        }
        Tensor::new(&[b, self.times, c], out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("repeat_time"))?;
        let c = shapes[0][1];
        let mut dx = vec![0.0; shapes[0][0] * c];
        for (i, row) in grad.data().chunks(c).enumerate() {
            for (d, g) in dx[(i / self.times) * c..][..c].iter_mut().zip(row) {
                *d += g;
            }
        }
        Ok(grads(vec![Tensor::new(&shapes[0], dx)?]))
    }
}

/// `[batch, time, 1]` to `[batch, time, times]`.
#[derive(Debug, Clone)]
pub struct RepeatChannels {
    times: usize,
    cache: Option<Vec<Vec<usize>>>,
}

impl RepeatChannels {
    pub fn new(times: usize) -> Self {
        Self { times, cache: None }
    }
}

impl Layer for RepeatChannels {
    boilerplate!(LayerKind::RepeatChannels);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "repeat_channels")?;
        let (b, t) = match x.shape() {
            [b, t, 1] => (*b, *t),
            s => return Err(shape_err!("repeat_channels expects [batch, time, 1], got {s:?}")),
        };
        let data = x
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, self.times))
            .collect();
        Tensor::new(&[b, t, self.times], data)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("repeat_channels"))?;
        let dx = grad.data().chunks(self.times).map(|r| r.iter().sum()).collect();
        Ok(grads(vec![Tensor::new(&shapes[0], dx)?]))
    }
}

/// Mean over channels, keeping a unit channel axis.
#[derive(Debug, Clone, Default)]
pub struct ChannelMean {
    cache: Option<Vec<Vec<usize>>>,
}

impl Layer for ChannelMean {
    boilerplate!(LayerKind::ChannelMean);

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "channel_mean")?;
        let (b, t, c) = expect_rank3(x, "channel_mean")?;
        let data = x
            .data()
            .chunks(c)
            .map(|r| r.iter().sum::<f64>() / c as f64)
            .collect();
        Tensor::new(&[b, t, 1], data)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let shapes = self.cache.take().ok_or_else(|| missing_cache("channel_mean"))?;
        let c = shapes[0][2];
        let dx = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / c as f64, c))
            .collect();
        Ok(grads(vec![Tensor::new(&shapes[0], dx)?]))
    }
}

/// Reverses the time axis.
#[derive(Debug, Clone, Copy)]
pub struct ReverseTime;

impl Layer for ReverseTime {
    fn kind(&self) -> LayerKind {
        LayerKind::ReverseTime
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        self.infer(inputs)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "reverse_time")?;
        expect_rank3(x, "reverse_time")?;
        x.reverse_axis(1)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        Ok(grads(vec![grad.reverse_axis(1)?]))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(*self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(b: usize, t: usize, c: usize) -> Tensor {
        Tensor::new(&[b, t, c], (0..b * t * c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn upsample_then_backward_sums_copies() {
        let x = seq(1, 2, 2);
        let mut u = Upsample1d::new(3);
        let y = u.forward(&[&x], Mode::Train).unwrap();
        assert_eq!(y.data(), &[0., 1., 0., 1., 0., 1., 2., 3., 2., 3., 2., 3.]);
        let dx = u.backward(&Tensor::full(&[1, 6, 2], 1.0)).unwrap().inputs.remove(0);
        assert_eq!(dx.data(), &[3.0; 4]);
    }

    #[test]
    fn fit_time_pads_and_crops() {
        let x = seq(1, 3, 1);
        let mut f = FitTime::new(5);
        assert_eq!(f.forward(&[&x], Mode::Train).unwrap().data(), &[0., 1., 2., 0., 0.]);
        let dx = f.backward(&Tensor::full(&[1, 5, 1], 1.0)).unwrap().inputs.remove(0);
        assert_eq!(dx.data(), &[1.0; 3]);
        assert_eq!(FitTime::new(2).infer(&[&x]).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn repeat_layers_expand_and_reduce() {
        let x = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let mut r = RepeatTime::new(3);
        let y = r.forward(&[&x], Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert_eq!(y.element(&[1, 2, 0]).unwrap(), 3.0);
        let dx = r.backward(&Tensor::full(&[2, 3, 2], 1.0)).unwrap().inputs.remove(0);
        assert_eq!(dx.data(), &[3.0; 4]);

        let m = seq(1, 2, 1);
        let mut rc = RepeatChannels::new(3);
        assert_eq!(rc.forward(&[&m], Mode::Train).unwrap().data(), &[0., 0., 0., 1., 1., 1.]);
        let dm = rc.backward(&Tensor::full(&[1, 2, 3], 0.5)).unwrap().inputs.remove(0);
        assert_eq!(dm.data(), &[1.5, 1.5]);
    }

    #[test]
    fn channel_mean_and_reverse() {
        let x = seq(1, 2, 3);
        assert_eq!(ChannelMean::default().infer(&[&x]).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(ReverseTime.infer(&[&x]).unwrap().data(), &[3., 4., 5., 0., 1., 2.]);
    }

    #[test]
    fn concat_backward_splits_widths() {
        let a = seq(1, 2, 1);
        let b = seq(1, 2, 2);
        let mut c = Concat::new(vec![1, 2]);
        let y = c.forward(&[&a, &b], Mode::Train).unwrap();
        assert_eq!(y.data(), &[0., 0., 1., 1., 2., 3.]);
        let g = c.backward(&y).unwrap();
        assert_eq!(g.inputs[0], a);
        assert_eq!(g.inputs[1], b);
    }

    #[test]
    fn multiply_swaps_operands_in_backward() {
        let a = Tensor::new(&[1, 2], vec![2., 3.]).unwrap();
        let b = Tensor::new(&[1, 2], vec![5., 7.]).unwrap();
        let mut m = Multiply::default();
        m.forward(&[&a, &b], Mode::Train).unwrap();
        let g = m.backward(&Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(g.inputs[0], b);
        assert_eq!(g.inputs[1], a);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let err = Flatten::default().backward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, crate::error::Error::State(_)));
    }
}
