use rand::Rng;

use super::{missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, SeededRng, Tensor};

/// Inverted dropout; the mask stream is fixed by the seed.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: SeededRng,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            rng: seeded_rng(seed),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Layer for Dropout {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn forward(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor> {
        let x = single(inputs, "dropout")?;
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = Some(None);
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(Some(mask));
        Tensor::new(x.shape(), data)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(single(inputs, "dropout")?.clone())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("dropout"))?;
        let dx = match mask {
            None => grad.clone(),
            Some(m) => Tensor::new(
                grad.shape(),
                grad.data().iter().zip(&m).map(|(g, k)| g * k).collect(),
            )?,
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
