use super::{missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalisation over every axis but the last.
///
/// Running statistics follow `run <- (1 - momentum) * run + momentum * batch`
/// and use the biased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gain: Tensor,
    shift: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    momentum: f64,
    epsilon: f64,
    cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gain: Tensor::full(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum,
            epsilon,
            cache: None,
        }
    }

    pub fn running_mean(&self) -> &Tensor {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor {
        &self.running_var
    }

    pub fn set_affine(&mut self, gain: Tensor, shift: Tensor) {
        self.gain = gain;
        self.shift = shift;
    }

    pub fn set_running(&mut self, mean: Tensor, var: Tensor) {
        self.running_mean = mean;
        self.running_var = var;
    }

    fn channels(&self, x: &Tensor) -> Result<usize> {
        let c = self.gain.len();
        if x.rank() < 2 || *x.shape().last().unwrap() != c {
            return Err(shape_err!(
                "batch_norm expects {c} channels on the last axis, got {:?}",
                x.shape()
            ));
        }
        Ok(c)
    }

    fn batch_stats(x: &Tensor, c: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = x.len() / c;
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch_norm needs at least 2 values per channel in train mode, got {n}"
            )));
        }
        let mut mean = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        Ok((mean, var))
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let c = mean.len();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (xr, yr) in xhat.data_mut().chunks_mut(c).zip(y.data_mut().chunks_mut(c)) {
            for ch in 0..c {
                let h = (xr[ch] - mean[ch]) * inv_std[ch];
                xr[ch] = h;
                yr[ch] = self.gain.data()[ch] * h + self.shift.data()[ch];
            }
        }
        Ok((y, xhat, inv_std))
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn forward(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor> {
        let x = single(inputs, "batch_norm")?;
        let c = self.channels(x)?;
        let (y, xhat, inv_std, batch_stats) = match mode {
            Mode::Train => {
                let (mean, var) = Self::batch_stats(x, c)?;
                let (y, xhat, inv_std) = self.normalize(x, &mean, &var)?;
                let m = self.momentum;
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * b;
                }
                (y, xhat, inv_std, true)
            }
            Mode::Eval => {
                let (y, xhat, inv_std) = self.normalize(
                    x,
                    self.running_mean.data(),
                    self.running_var.data(),
                )?;
                (y, xhat, inv_std, false)
            }
        };
        self.cache = Some(NormCache {
            xhat,
            inv_std,
            batch_stats,
        });
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "batch_norm")?;
        self.channels(x)?;
        Ok(self
            .normalize(x, self.running_mean.data(), self.running_var.data())?
            .0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batch_norm"))?;
        let c = self.gain.len();
        let n = (grad.len() / c) as f64;
        let gd = grad.data();
        let hd = cache.xhat.data();
        let mut dgain = vec![0.0; c];
        let mut dshift = vec![0.0; c];
        for (gr, hr) in gd.chunks(c).zip(hd.chunks(c)) {
            for ch in 0..c {
                dgain[ch] += gr[ch] * hr[ch];
                dshift[ch] += gr[ch];
            }
        }
        let gain = self.gain.data();
        let mut dx = vec![0.0; grad.len()];
        for ((dr, gr), hr) in dx.chunks_mut(c).zip(gd.chunks(c)).zip(hd.chunks(c)) {
            for ch in 0..c {
                let scale = gain[ch] * cache.inv_std[ch];
                dr[ch] = if cache.batch_stats {
                    scale * (gr[ch] - dshift[ch] / n - hr[ch] * dgain[ch] / n)
                } else {
                    scale * gr[ch]
                };
            }
        }
        Ok(Backward {
            inputs: vec![Tensor::new(grad.shape(), dx)?],
            params: vec![Tensor::new(&[c], dgain)?, Tensor::new(&[c], dshift)?],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("gain".into(), &self.gain), ("shift".into(), &self.shift)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("gain".into(), &mut self.gain),
            ("shift".into(), &mut self.shift),
        ]
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("gain".into(), &mut self.gain),
            ("shift".into(), &mut self.shift),
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
