use std::fmt;

use super::{expect_rank3, fan_limit, missing_cache, single, Activation, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output length `ceil(time / stride)`, extra padding goes after.
    Same,
    /// Zero-pads `kernel - 1` on both sides before a valid convolution.
    Full,
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
            Padding::Full => "full",
        })
    }
}

/// `(pad_before, output_length)`.
fn geometry(time: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(shape_err!("kernel size and stride must be at least 1"));
    }
    match padding {
        Padding::Valid => {
            if time < kernel {
                return Err(shape_err!(
                    "valid convolution needs time >= kernel, got time {time} < kernel {kernel}"
                ));
            }
            Ok((0, (time - kernel) / stride + 1))
        }
        Padding::Same => {
            let t_out = time.div_ceil(stride);
            let total = ((t_out - 1) * stride + kernel).saturating_sub(time);
            Ok((total / 2, t_out))
        }
        Padding::Full => Ok((kernel - 1, (time + kernel - 2) / stride + 1)),
    }
}

pub(crate) fn output_length(time: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    geometry(time, kernel, stride, padding).map(|(_, t)| t)
}

/// One-dimensional cross-correlation over `[batch, time, channels]`.
///
/// Kernel layout is `[kernel, in_channels, filters]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    kernel: Tensor,
    bias: Tensor,
    stride: usize,
    padding: Padding,
    activation: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || filters == 0 {
            return Err(shape_err!("conv1d needs positive kernel, stride and filters"));
        }
        let limit = fan_limit(kernel * in_channels, kernel * filters);
        Ok(Self {
            kernel: Tensor::uniform_f32(&[kernel, in_channels, filters], limit, rng),
            bias: Tensor::zeros(&[filters]),
            stride,
            padding,
            activation,
            cache: None,
        })
    }

    /// Builds a layer with explicit weights.
    pub fn from_weights(
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<Self> {
        match (kernel.shape(), bias.shape()) {
            ([_, _, f], [fb]) if f == fb => {}
            (k, b) => return Err(shape_err!("conv1d weights {k:?} and bias {b:?} disagree")),
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
            activation,
            cache: None,
        })
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2])
    }

    fn compute(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = expect_rank3(x, "conv1d")?;
        let (k, ci, f) = self.dims();
        if c != ci {
            return Err(shape_err!("conv1d expects {ci} input channels, got {c}"));
        }
        let (before, t_out) = geometry(t, k, self.stride, self.padding)?;
        let w = self.kernel.data();
        let xd = x.data();
        let mut out = vec![0.0; b * t_out * f];
        for bi in 0..b {
            for to in 0..t_out {
                let row = &mut out[(bi * t_out + to) * f..][..f];
                row.copy_from_slice(self.bias.data());
                for j in 0..k {
                    let pos = (to * self.stride + j) as isize - before as isize;
                    if pos < 0 || pos as usize >= t {
                        continue;
                    }
                    let xin = &xd[(bi * t + pos as usize) * c..][..c];
                    for (ch, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[(j * ci + ch) * f..][..f];
                        for (o, &wv) in row.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let y = Tensor::new(&[b, t_out, f], out)?;
        Ok(self.activation.apply_tensor(y))
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv1d
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let x = single(inputs, "conv1d")?;
        let y = self.compute(x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.compute(single(inputs, "conv1d")?)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let (x, y) = self.cache.take().ok_or_else(|| missing_cache("conv1d"))?;
        let (b, t, c) = expect_rank3(&x, "conv1d")?;
        let (k, _, f) = self.dims();
        let (before, t_out) = geometry(t, k, self.stride, self.padding)?;
        let mut g = grad.clone();
        self.activation.backprop(y.data(), g.data_mut(), f);
        let gd = g.data();
        let xd = x.data();
        let w = self.kernel.data();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; self.kernel.len()];
        let mut db = vec![0.0; f];
        for bi in 0..b {
            for to in 0..t_out {
                let grow = &gd[(bi * t_out + to) * f..][..f];
                for (d, &gv) in db.iter_mut().zip(grow) {
                    *d += gv;
                }
                for j in 0..k {
                    let pos = (to * self.stride + j) as isize - before as isize;
                    if pos < 0 || pos as usize >= t {
                        continue;
                    }
                    let base = (bi * t + pos as usize) * c;
                    for ch in 0..c {
                        let widx = (j * c + ch) * f;
                        let wrow = &w[widx..][..f];
                        let xv = xd[base + ch];
                        let mut acc = 0.0;
                        let dwrow = &mut dw[widx..][..f];
                        for ((dwv, &wv), &gv) in dwrow.iter_mut().zip(wrow).zip(grow) {
                            acc += gv * wv;
                            *dwv += xv * gv;
                        }
                        dx[base + ch] += acc;
                    }
                }
            }
        }
        Ok(Backward {
            inputs: vec![Tensor::new(x.shape(), dx)?],
            params: vec![
                Tensor::new(self.kernel.shape(), dw)?,
                Tensor::new(&[f], db)?,
            ],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_rng, Fill};

    fn gaussian(shape: &[usize], seed: u64) -> Tensor {
        Tensor::make(shape, Fill::Gaussian { mean: 0.0, stdev: 1.0, seed }).unwrap()
    }

    // Direct summation over an explicitly zero-padded input.
    fn oracle(x: &Tensor, w: &Tensor, bias: &Tensor, before: usize, after: usize, stride: usize) -> Tensor {
        let xp = x.pad(1, before, after, 0.0).unwrap();
        let (b, t, c) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
        let (k, f) = (w.shape()[0], w.shape()[2]);
        let t_out = (t - k) / stride + 1;
        let mut out = vec![0.0; b * t_out * f];
        for bi in 0..b {
            for to in 0..t_out {
                for fi in 0..f {
                    let mut s = bias.data()[fi];
                    for j in 0..k {
                        for ch in 0..c {
                            s += xp.element(&[bi, to * stride + j, ch]).unwrap()
                                * w.element(&[j, ch, fi]).unwrap();
                        }
                    }
                    out[(bi * t_out + to) * f + fi] = s;
                }
            }
        }
        Tensor::new(&[b, t_out, f], out).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::new(&[1, 5, 1], vec![1., -2., 3., 0.5, 4.]).unwrap();
        let conv = Conv1d::from_weights(
            Tensor::full(&[1, 1, 1], 1.0),
            Tensor::zeros(&[1]),
            1,
            Padding::Valid,
            Activation::Linear,
        )
        .unwrap();
        assert_eq!(conv.infer(&[&x]).unwrap().data(), x.data());
    }

    #[test]
    fn output_lengths() {
        assert_eq!(output_length(10, 3, 1, Padding::Valid).unwrap(), 8);
        assert_eq!(output_length(10, 3, 1, Padding::Full).unwrap(), 12);
        assert_eq!(output_length(10, 3, 2, Padding::Same).unwrap(), 5);
        assert!(output_length(2, 3, 1, Padding::Valid).is_err());
        for k in 1..8 {
            assert_eq!(output_length(9, k, 1, Padding::Same).unwrap(), 9);
        }
    }

    #[test]
    fn valid_and_full_match_direct_summation() {
        let x = gaussian(&[1, 10, 1], 4);
        let w = gaussian(&[3, 1, 2], 5);
        let bias = gaussian(&[2], 6);
        for (padding, pad) in [(Padding::Valid, 0), (Padding::Full, 2)] {
            let conv = Conv1d::from_weights(w.clone(), bias.clone(), 1, padding, Activation::Linear).unwrap();
            let got = conv.infer(&[&x]).unwrap();
            let want = oracle(&x, &w, &bias, pad, pad, 1);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn same_matches_pad_then_valid() {
        let x = gaussian(&[2, 9, 3], 7);
        let mut rng = seeded_rng(8);
        let conv = Conv1d::new(3, 4, 3, 1, Padding::Same, Activation::Linear, &mut rng).unwrap();
        let got = conv.infer(&[&x]).unwrap();
        let want = oracle(&x, &conv.kernel, &conv.bias, 1, 1, 1);
        assert_eq!(got.shape(), &[2, 9, 4]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn strided_same_matches_oracle() {
        let x = gaussian(&[1, 10, 2], 9);
        let mut rng = seeded_rng(10);
        let conv = Conv1d::new(2, 3, 4, 3, Padding::Same, Activation::Linear, &mut rng).unwrap();
        let got = conv.infer(&[&x]).unwrap();
        // t_out = 4, total pad = 3*3 + 4 - 10 = 3 -> 1 before, 2 after
        let want = oracle(&x, &conv.kernel, &conv.bias, 1, 2, 3);
        assert_eq!(got.shape(), &[1, 4, 3]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn short_input_is_a_shape_error() {
        let mut rng = seeded_rng(1);
        let conv = Conv1d::new(1, 1, 5, 1, Padding::Valid, Activation::Linear, &mut rng).unwrap();
        assert!(conv.infer(&[&Tensor::zeros(&[1, 4, 1])]).is_err());
    }
}
