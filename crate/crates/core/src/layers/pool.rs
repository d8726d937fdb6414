use super::{expect_rank3, missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

pub(crate) fn output_length(time: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(shape_err!("pooling window and stride must be at least 1"));
    }
    if window > time {
        return Err(shape_err!(
            "pooling window {window} exceeds time extent {time}"
        ));
    }
    Ok((time - window) / stride + 1)
}

#[derive(Debug, Clone)]
enum PoolCache {
    /// Input shape and flat argmax offset per output element.
    Max(Vec<usize>, Vec<usize>),
    Shape(Vec<usize>),
}

/// Max, average, or global-average pooling along the time axis.
#[derive(Debug, Clone)]
pub struct Pool1d {
    kind: PoolKind,
    window: usize,
    stride: usize,
    cache: Option<PoolCache>,
}

impl Pool1d {
    pub fn new(kind: PoolKind, window: usize, stride: usize) -> Result<Self> {
        if kind != PoolKind::GlobalAvg && (window == 0 || stride == 0) {
            return Err(shape_err!("pooling window and stride must be at least 1"));
        }
        Ok(Self {
            kind,
            window,
            stride,
            cache: None,
        })
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let (b, t, c) = expect_rank3(x, "pool1d")?;
        let xd = x.data();
        match self.kind {
            PoolKind::GlobalAvg => {
                let mut out = vec![0.0; b * c];
                for bi in 0..b {
                    for ti in 0..t {
                        let row = &xd[(bi * t + ti) * c..][..c];
                        for (o, &v) in out[bi * c..][..c].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= t as f64);
                Ok((Tensor::new(&[b, c], out)?, None))
            }
            PoolKind::Max | PoolKind::Avg => {
                let t_out = output_length(t, self.window, self.stride)?;
                let n = b * t_out * c;
                let mut out = vec![0.0; n];
                let mut arg = if self.kind == PoolKind::Max { vec![0; n] } else { vec![] };
                for bi in 0..b {
                    for to in 0..t_out {
                        for ch in 0..c {
                            let o = (bi * t_out + to) * c + ch;
                            let start = to * self.stride;
                            if self.kind == PoolKind::Max {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_at = 0;
                                for j in 0..self.window {
                                    let idx = (bi * t + start + j) * c + ch;
                                    // strict comparison keeps the first maximum
                                    if xd[idx] > best || j == 0 {
                                        best = xd[idx];
                                        best_at = idx;
                                    }
                                }
                                out[o] = best;
                                arg[o] = best_at;
                            } else {
                                let s: f64 = (0..self.window)
                                    .map(|j| xd[(bi * t + start + j) * c + ch])
                                    .sum();
                                out[o] = s / self.window as f64;
                            }
                        }
                    }
                }
                let arg = (self.kind == PoolKind::Max).then_some(arg);
                Ok((Tensor::new(&[b, t_out, c], out)?, arg))
            }
        }
    }
}

impl Layer for Pool1d {
    fn kind(&self) -> LayerKind {
        match self.kind {
            PoolKind::Max => LayerKind::MaxPool1d,
            PoolKind::Avg => LayerKind::AvgPool1d,
            PoolKind::GlobalAvg => LayerKind::GlobalAvgPool1d,
        }
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let x = single(inputs, "pool1d")?;
        let (y, arg) = self.compute(x)?;
        self.cache = Some(match arg {
            Some(a) => PoolCache::Max(x.shape().to_vec(), a),
            None => PoolCache::Shape(x.shape().to_vec()),
        });
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(self.compute(single(inputs, "pool1d")?)?.0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("pool1d"))?;
        let gd = grad.data();
        let dx = match cache {
            PoolCache::Max(shape, arg) => {
                let mut dx = vec![0.0; shape.iter().product()];
                for (&a, &g) in arg.iter().zip(gd) {
                    dx[a] += g;
                }
                Tensor::new(&shape, dx)?
            }
            PoolCache::Shape(shape) => {
                let (b, t, c) = (shape[0], shape[1], shape[2]);
                let mut dx = vec![0.0; b * t * c];
                if self.kind == PoolKind::GlobalAvg {
                    for bi in 0..b {
                        for ti in 0..t {
                            for ch in 0..c {
                                dx[(bi * t + ti) * c + ch] = gd[bi * c + ch] / t as f64;
                            }
                        }
                    }
                } else {
                    let t_out = output_length(t, self.window, self.stride)?;
                    let w = self.window as f64;
                    for bi in 0..b {
                        for to in 0..t_out {
                            for ch in 0..c {
                                let g = gd[(bi * t_out + to) * c + ch] / w;
                                for j in 0..self.window {
                                    dx[(bi * t + to * self.stride + j) * c + ch] += g;
                                }
                            }
                        }
                    }
                }
                Tensor::new(&shape, dx)?
            }
        };
        Ok(Backward {
            inputs: vec![dx],
            params: vec![],
        })
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
