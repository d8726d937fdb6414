use super::{expect_rank3, fan_limit, missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, SeededRng, Tensor};

/// Additive attention pooling over time.
///
/// Scores `e_t = tanh(x_t W + b) . v` are softmaxed across time and the
/// output is the weighted sum of the input steps, `[batch, channels]`.
#[derive(Debug, Clone)]
pub struct TanhAttention {
    weight: Tensor,
    bias: Tensor,
    score: Tensor,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    x: Tensor,
    hidden: Vec<f64>,
    weights: Vec<f64>,
}

impl TanhAttention {
    pub fn new(channels: usize, units: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: Tensor::uniform_f32(&[channels, units], fan_limit(channels, units), rng),
            bias: Tensor::zeros(&[units]),
            score: Tensor::uniform_f32(&[units], fan_limit(units, 1), rng),
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, AttnCache)> {
        let (b, t, c) = expect_rank3(x, "tanh_attention")?;
        let (wc, u) = (self.weight.shape()[0], self.weight.shape()[1]);
        if c != wc {
            return Err(shape_err!("tanh_attention expects {wc} channels, got {c}"));
        }
        let mut hidden: Vec<f64> = (0..b * t).flat_map(|_| self.bias.data().iter().cloned()).collect();
        gemm_acc(x.data(), self.weight.data(), &mut hidden, b * t, c, u);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let v = self.score.data();
        let mut weights = vec![0.0; b * t];
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            let e: Vec<f64> = (0..t)
                .map(|ti| hidden[(bi * t + ti) * u..][..u].iter().zip(v).map(|(h, w)| h * w).sum())
                .collect();
            let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|s| (s - m).exp()).sum();
            for ti in 0..t {
                let a = (e[ti] - m).exp() / z;
                weights[bi * t + ti] = a;
                for (o, xv) in out[bi * c..][..c].iter_mut().zip(&x.data()[(bi * t + ti) * c..][..c]) {
                    *o += a * xv;
                }
            }
        }
        Ok((
            Tensor::new(&[b, c], out)?,
            AttnCache {
                x: x.clone(),
                hidden,
                weights,
            },
        ))
    }
}

impl Layer for TanhAttention {
    fn kind(&self) -> LayerKind {
        LayerKind::TanhAttention
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let (y, cache) = self.run(single(inputs, "tanh_attention")?)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(self.run(single(inputs, "tanh_attention")?)?.0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("tanh_attention"))?;
        let (b, t, c) = expect_rank3(&cache.x, "tanh_attention")?;
        let u = self.weight.shape()[1];
        let xd = cache.x.data();
        let gd = grad.data();
        let v = self.score.data();
        let mut dx = vec![0.0; b * t * c];
        let mut dv = vec![0.0; u];
        let mut dpre = vec![0.0; b * t * u];
        for bi in 0..b {
            let g = &gd[bi * c..][..c];
            let a = &cache.weights[bi * t..][..t];
            let da: Vec<f64> = (0..t)
                .map(|ti| xd[(bi * t + ti) * c..][..c].iter().zip(g).map(|(x, g)| x * g).sum())
                .collect();
            let dot: f64 = a.iter().zip(&da).map(|(a, d)| a * d).sum();
            for ti in 0..t {
                let row = bi * t + ti;
                for (d, gv) in dx[row * c..][..c].iter_mut().zip(g) {
                    *d += a[ti] * gv;
                }
                let de = a[ti] * (da[ti] - dot);
                let h = &cache.hidden[row * u..][..u];
                for k in 0..u {
                    dv[k] += h[k] * de;
                    dpre[row * u + k] = de * v[k] * (1.0 - h[k] * h[k]);
                }
            }
        }
        let mut dw = vec![0.0; c * u];
        gemm_at_b_acc(xd, &dpre, &mut dw, b * t, c, u);
        gemm_a_bt_acc(&dpre, self.weight.data(), &mut dx, b * t, u, c);
        let mut db = vec![0.0; u];
        for row in dpre.chunks(u) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Ok(Backward {
            inputs: vec![Tensor::new(cache.x.shape(), dx)?],
            params: vec![
                Tensor::new(&[c, u], dw)?,
                Tensor::new(&[u], db)?,
                Tensor::new(&[u], dv)?,
            ],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("kernel".into(), &self.weight),
            ("bias".into(), &self.bias),
            ("score".into(), &self.score),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("kernel".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
            ("score".into(), &mut self.score),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
