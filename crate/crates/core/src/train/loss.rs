use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Added inside the logarithm of the cross-entropy.
pub const CE_EPSILON: f64 = 1e-12;

/// Largest tolerated deviation of a probability row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Mae,
    Mse,
    CategoricalCrossentropy,
}

impl Loss {
    /// Scalar loss and its gradient with respect to `pred`.
    pub fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        if pred.shape() != target.shape() {
            return Err(shape_err!(
                "{self} loss: prediction {:?} and target {:?} differ",
                pred.shape(),
                target.shape()
            ));
        }
        if pred.is_empty() {
            return Err(shape_err!("{self} loss on an empty tensor"));
        }
        let n = pred.len() as f64;
        let (p, t) = (pred.data(), target.data());
        match self {
            Loss::Mae => {
                let value = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
                let grad = p
                    .iter()
                    .zip(t)
                    .map(|(a, b)| match a.partial_cmp(b) {
                        Some(std::cmp::Ordering::Greater) => 1.0 / n,
                        Some(std::cmp::Ordering::Less) => -1.0 / n,
                        _ => 0.0,
                    })
                    .collect();
                Ok((value, Tensor::new(pred.shape(), grad)?))
            }
            Loss::Mse => {
                let value = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
                let grad = p.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / n).collect();
                Ok((value, Tensor::new(pred.shape(), grad)?))
            }
            Loss::CategoricalCrossentropy => {
                let classes = *pred.shape().last().unwrap();
                let rows = pred.len() / classes;
                for (r, row) in p.chunks(classes).enumerate() {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::Contract(format!(
                            "cross-entropy expects probability rows; row {r} sums to {s}"
                        )));
                    }
                }
                let m = rows as f64;
                let value = -p.iter().zip(t).map(|(a, b)| b * (a + CE_EPSILON).ln()).sum::<f64>() / m;
                let grad = p.iter().zip(t).map(|(a, b)| -b / (a + CE_EPSILON) / m).collect();
                Ok((value, Tensor::new(pred.shape(), grad)?))
            }
        }
    }

    pub fn value(&self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        self.evaluate(pred, target).map(|(v, _)| v)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Mae => "mae",
            Loss::Mse => "mse",
            Loss::CategoricalCrossentropy => "categorical_crossentropy",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Loss::Mae),
            "mse" => Ok(Loss::Mse),
            "categorical_crossentropy" | "cce" => Ok(Loss::CategoricalCrossentropy),
            other => Err(Error::Param(format!("unknown loss '{other}'"))),
        }
    }
}
