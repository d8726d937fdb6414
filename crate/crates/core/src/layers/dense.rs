use super::{fan_limit, missing_cache, single, Activation, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, SeededRng, Tensor};

/// Fully connected layer on `[batch, features]`.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        Self {
            weight: Tensor::uniform_f32(&[inputs, units], fan_limit(inputs, units), rng),
            bias: Tensor::zeros(&[units]),
            activation,
            cache: None,
        }
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([_, u], [ub]) if u == ub => {}
            (w, b) => return Err(shape_err!("dense weights {w:?} and bias {b:?} disagree")),
        }
        Ok(Self {
            weight,
            bias,
            activation,
            cache: None,
        })
    }

    fn compute(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n) = match x.shape() {
            [b, n] => (*b, *n),
            s => return Err(shape_err!("dense expects [batch, features], got {s:?}")),
        };
        let (ni, u) = (self.weight.shape()[0], self.weight.shape()[1]);
        if n != ni {
            return Err(shape_err!("dense expects {ni} features, got {n}"));
        }
        let mut out = Vec::with_capacity(b * u);
        for _ in 0..b {
            out.extend_from_slice(self.bias.data());
        }
        gemm_acc(x.data(), self.weight.data(), &mut out, b, n, u);
        let y = Tensor::new(&[b, u], out)?;
        Ok(self.activation.apply_tensor(y))
    }
}

impl Layer for Dense {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let x = single(inputs, "dense")?;
        let y = self.compute(x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.compute(single(inputs, "dense")?)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let (x, y) = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        let (b, n) = (x.shape()[0], x.shape()[1]);
        let u = self.weight.shape()[1];
        let mut g = grad.clone();
        self.activation.backprop(y.data(), g.data_mut(), u);
        let mut dw = vec![0.0; n * u];
        gemm_at_b_acc(x.data(), g.data(), &mut dw, b, n, u);
        let mut dx = vec![0.0; b * n];
        gemm_a_bt_acc(g.data(), self.weight.data(), &mut dx, b, u, n);
        let mut db = vec![0.0; u];
        for row in g.data().chunks(u) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Ok(Backward {
            inputs: vec![Tensor::new(&[b, n], dx)?],
            params: vec![Tensor::new(&[n, u], dw)?, Tensor::new(&[u], db)?],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("kernel".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("kernel".into(), &mut self.weight),
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

    #[test]
    fn identity_weights() {
        let x = Tensor::new(&[2, 3], vec![1., 2., 3., -4., 5., 6.]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let d = Dense::from_weights(w, Tensor::zeros(&[3]), Activation::Linear).unwrap();
        assert_eq!(d.infer(&[&x]).unwrap(), x);
    }

    #[test]
    fn hand_affine() {
        let x = Tensor::new(&[1, 2], vec![1., 2.]).unwrap();
        let d = Dense::from_weights(
            Tensor::new(&[2, 1], vec![1., 1.]).unwrap(),
            Tensor::new(&[1], vec![3.]).unwrap(),
            Activation::Linear,
        )
        .unwrap();
        assert_eq!(d.infer(&[&x]).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matches_matmul_plus_bias() {
        let x = Tensor::make(&[4, 5], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: 21 }).unwrap();
        let mut rng = seeded_rng(22);
        let d = Dense::new(5, 3, Activation::Linear, &mut rng);
        let mut want = x.matmul(&d.weight).unwrap();
        for row in want.data_mut().chunks_mut(3) {
            for (v, b) in row.iter_mut().zip(d.bias.data()) {
                *v += b;
            }
        }
        let got = d.infer(&[&x]).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_three_input_is_rejected() {
        let mut rng = seeded_rng(1);
        let d = Dense::new(2, 2, Activation::Linear, &mut rng);
        assert!(d.infer(&[&Tensor::zeros(&[1, 2, 2])]).is_err());
    }
}
