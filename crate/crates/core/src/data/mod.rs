//! Preprocessing, dataset assembly and synthetic series.
//!
//! A raw series is a `[time, features]` tensor. Datasets pair a batch of
//! model inputs with a batch of targets along a shared leading axis.

mod anomaly;
mod cache;
mod csv_io;
pub mod synth;

pub use anomaly::{anomaly_harness, anomaly_scores, labeled_windows, normal_windows, top_k, AnomalyReport};
pub use cache::{load_dataset, save_dataset, DATASET_MAGIC};
pub use csv_io::{load_csv, write_csv, Column};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Model inputs and targets with matching sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    /// `[n, time, channels]`
    pub inputs: Tensor,
    /// `[n, horizon, channels]`, `[n, classes]` or `[n, steps, features]`
    pub targets: Tensor,
    /// Where the data came from and what was applied to it.
    pub note: String,
}

impl SeriesDataset {
    pub fn new(inputs: Tensor, targets: Tensor, note: impl Into<String>) -> Result<Self> {
        if inputs.rank() == 0 || targets.rank() == 0 || inputs.shape()[0] != targets.shape()[0] {
            return Err(shape_err!(
                "dataset inputs {:?} and targets {:?} need the same leading extent",
                inputs.shape(),
                targets.shape()
            ));
        }
        Ok(Self {
            inputs,
            targets,
            note: note.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.inputs.take_rows(rows)?, self.targets.take_rows(rows)?, self.note.clone())
    }

    /// Contiguous train/validation/test partition of the samples.
    pub fn chrono_split(&self, fractions: (f64, f64, f64)) -> Result<(Self, Self, Self)> {
        let (a, b, _) = split_lengths(self.len(), fractions)?;
        let n = self.len();
        let part = |lo: usize, hi: usize| self.subset(&(lo..hi).collect::<Vec<_>>());
        Ok((part(0, a)?, part(a, a + b)?, part(a + b, n)?))
    }
}

/// The split used throughout: 70% train, 20% validation, 10% test.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.70, 0.20, 0.10);

fn split_lengths(n: usize, (a, b, c): (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    if n < 3 {
        return Err(Error::Data(format!("cannot split {n} steps into three non-empty parts")));
    }
    // the small nudge keeps products such as 0.7 * 30 from flooring down
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let (la, lb) = (floor(a), floor(b));
    let lc = n - la - lb;
    if la == 0 || lb == 0 || lc == 0 {
        return Err(Error::Data(format!("splitting {n} steps leaves an empty part")));
    }
    Ok((la, lb, lc))
}

fn columns(series: &Tensor) -> Result<(usize, usize)> {
    match series.shape() {
        [n] => Ok((*n, 1)),
        [n, k] => Ok((*n, *k)),
        s => Err(shape_err!("expected a [time] or [time, features] series, got {s:?}")),
    }
}

/// Trailing moving average of width `w`, applied `iterations` times.
///
/// Step `t` becomes the mean of steps `max(0, t + 1 - w)..=t`, so the first
/// steps average over the shorter prefix available.
pub fn smooth(series: &Tensor, w: usize, iterations: usize) -> Result<Tensor> {
    let (n, k) = columns(series)?;
    if n == 0 {
        return Err(Error::Data("cannot smooth an empty series".into()));
    }
    if w == 0 {
        return Err(Error::Param("smoothing window must be at least 1".into()));
    }
    let mut cur = series.data().to_vec();
    for _ in 0..iterations {
        let mut next = vec![0.0; cur.len()];
        for col in 0..k {
            let mut sum = 0.0;
            for t in 0..n {
                sum += cur[t * k + col];
                if t >= w {
                    sum -= cur[(t - w) * k + col];
                }
                next[t * k + col] = sum / (t + 1).min(w) as f64;
            }
        }
        cur = next;
    }
    Tensor::new(series.shape(), cur)
}

/// Mean and sample standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Shifts and scales a segment to mean 0 and sample standard deviation 1.
pub fn zscore(segment: &[f64]) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(Error::Data("degenerate segment: need at least two values".into()));
    }
    let (mean, std) = moments(segment);
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::Data("degenerate segment: zero variance".into()));
    }
    Ok(segment.iter().map(|v| (v - mean) / std).collect())
}

/// How a [`Scaler`] maps each feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// `(x - mean) / std`
    ZScore,
    /// `(x - min) / (max - min)`
    MinMax,
}

/// Per-column affine normalisation fitted on one series and reused on others.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub scaling: Scaling,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(series: &Tensor, scaling: Scaling) -> Result<Self> {
        let (n, k) = columns(series)?;
        let mut offset = Vec::with_capacity(k);
        let mut scale = Vec::with_capacity(k);
        for col in 0..k {
            let values: Vec<f64> = (0..n).map(|t| series.data()[t * k + col]).collect();
            let (o, s) = match scaling {
                Scaling::ZScore => {
                    if n < 2 {
                        (0.0, 0.0)
                    } else {
                        moments(&values)
                    }
                }
                Scaling::MinMax => {
                    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
            };
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Data(format!("degenerate segment: column {col} is constant")));
            }
            offset.push(o);
            scale.push(s);
        }
        Ok(Self {
            scaling,
            offset,
            scale,
        })
    }

    fn map(&self, series: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let (_, k) = columns(series)?;
        if k != self.offset.len() {
            return Err(shape_err!("scaler fitted on {} columns, series has {k}", self.offset.len()));
        }
        let data = series
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.offset[i % k], self.scale[i % k]))
            .collect();
        Tensor::new(series.shape(), data)
    }

    pub fn apply(&self, series: &Tensor) -> Result<Tensor> {
        self.map(series, |v, o, s| (v - o) / s)
    }

    pub fn invert(&self, series: &Tensor) -> Result<Tensor> {
        self.map(series, |v, o, s| v * s + o)
    }
}

/// Contiguous train/validation/test parts of a series along time.
///
/// Lengths are `floor(n * fraction)` for the first two parts; the remainder
/// goes to the last.
pub fn chrono_split(series: &Tensor, fractions: (f64, f64, f64)) -> Result<(Tensor, Tensor, Tensor)> {
    let n = series.shape().first().copied().unwrap_or(0);
    let (a, b, c) = split_lengths(n, fractions)?;
    Ok((series.crop(0, 0, a)?, series.crop(0, a, b)?, series.crop(0, a + b, c)?))
}

/// Sliding `(input, target)` pairs: pair `j` reads steps `[j*stride, j*stride + i)`
/// and predicts `[j*stride + i, j*stride + i + o)`.
pub fn windowize(series: &Tensor, i: usize, o: usize, stride: usize) -> Result<SeriesDataset> {
    let (n, k) = columns(series)?;
    if i == 0 || o == 0 || stride == 0 {
        return Err(Error::Param("window lengths and stride must be positive".into()));
    }
    if n < i + o {
        return Err(shape_err!("series of length {n} is shorter than window {i} plus horizon {o}"));
    }
    let count = (n - i - o) / stride + 1;
    let d = series.data();
    let mut inputs = Vec::with_capacity(count * i * k);
    let mut targets = Vec::with_capacity(count * o * k);
    for j in 0..count {
        let s = j * stride;
        inputs.extend_from_slice(&d[s * k..(s + i) * k]);
        targets.extend_from_slice(&d[(s + i) * k..(s + i + o) * k]);
    }
    SeriesDataset::new(
        Tensor::new(&[count, i, k], inputs)?,
        Tensor::new(&[count, o, k], targets)?,
        format!("windows i={i} o={o} stride={stride}"),
    )
}

/// Keeps the first `target_len` values, padding with trailing zeros.
pub fn pad_or_truncate(segment: &[f64], target_len: usize) -> Vec<f64> {
    let mut out: Vec<f64> = segment.iter().take(target_len).copied().collect();
    out.resize(target_len, 0.0);
    out
}

/// One-hot rows for class ids.
pub fn one_hot(ids: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[ids.len(), classes]);
    for (r, &c) in ids.iter().enumerate() {
        if c >= classes {
            return Err(Error::Data(format!("class id {c} out of range for {classes} classes")));
        }
        t.data_mut()[r * classes + c] = 1.0;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn trailing_mean_by_hand() {
        assert_eq!(smooth(&col(&[0.0, 2.0, 4.0]), 2, 1).unwrap().data(), &[0.0, 1.0, 3.0]);
        let x = col(&[1.0, 5.0, -2.0]);
        assert_eq!(smooth(&x, 1, 3).unwrap(), x);
        assert!(matches!(smooth(&col(&[1.0]), 0, 1), Err(Error::Param(_))));
    }

    #[test]
    fn split_lengths_by_hand() {
        assert_eq!(split_lengths(100, DEFAULT_SPLIT).unwrap(), (70, 20, 10));
        assert_eq!(split_lengths(10, DEFAULT_SPLIT).unwrap(), (7, 2, 1));
        assert!(matches!(split_lengths(2, DEFAULT_SPLIT), Err(Error::Data(_))));
        assert!(split_lengths(10, (0.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn windows_by_hand() {
        let d = windowize(&col(&[1.0, 2.0, 3.0]), 1, 1, 1).unwrap();
        assert_eq!(d.inputs.data(), &[1.0, 2.0]);
        assert_eq!(d.targets.data(), &[2.0, 3.0]);
        assert_eq!(windowize(&Tensor::zeros(&[1100, 1]), 1000, 50, 1).unwrap().len(), 51);
        assert!(matches!(windowize(&col(&[1.0]), 1, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn pad_and_truncate() {
        assert_eq!(pad_or_truncate(&[1.0; 1200], 1000), vec![1.0; 1000]);
        let p = pad_or_truncate(&[2.0; 400], 1000);
        assert_eq!(p.len(), 1000);
        assert!(p[400..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_symmetric_and_degenerate() {
        let z = zscore(&[-1.0, 1.0]).unwrap();
        assert!((z[0] + z[1]).abs() < 1e-15 && z[1] > 0.0);
        assert!(zscore(&[3.0, 3.0, 3.0]).is_err());
    }

    #[test]
    fn scaler_round_trips() {
        let x = Tensor::new(&[4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 40.0, 5.0, 30.0]).unwrap();
        for s in [Scaling::ZScore, Scaling::MinMax] {
            let sc = Scaler::fit(&x, s).unwrap();
            let back = sc.invert(&sc.apply(&x).unwrap()).unwrap();
            assert!(back.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let mm = Scaler::fit(&x, Scaling::MinMax).unwrap().apply(&x).unwrap();
        assert_eq!(mm.data()[0], 0.0);
        assert_eq!(mm.data()[5], 1.0);
    }
}
