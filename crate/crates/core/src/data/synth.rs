//! Deterministic synthetic stand-ins for the forecasting, classification and
//! anomaly datasets.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{one_hot, SeriesDataset};
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, Tensor};

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Param(format!("{what} must be positive")));
    }
    Ok(())
}

/// Sum of unit sines with the given periods (in steps) plus Gaussian noise,
/// as a `[length, 1]` series. Phases are drawn from `seed`.
pub fn sine_mix(periods: &[f64], noise: f64, length: usize, seed: u64) -> Result<Tensor> {
    positive("length", length)?;
    if periods.is_empty() || periods.iter().any(|p| p.is_nan() || *p <= 0.0) {
        return Err(Error::Param("sine periods must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    let phases: Vec<f64> = periods.iter().map(|_| rng.gen_range(0.0..TAU)).collect();
    let data = (0..length)
        .map(|t| {
            let clean: f64 = periods
                .iter()
                .zip(&phases)
                .map(|(p, ph)| (TAU * t as f64 / p + ph).sin())
                .sum();
            let n: f64 = StandardNormal.sample(&mut rng);
            clean + noise * n
        })
        .collect();
    Tensor::new(&[length, 1], data)
}

/// Base waveforms for class `c`: shape cycles through five families, the
/// cycle count grows every five classes.
fn waveform(class: usize, phase: f64) -> impl Fn(f64) -> f64 {
    let cycles = 3.0 + 2.0 * (class / 5) as f64;
    let family = class % 5;
    move |u: f64| {
        let x = (u * cycles + phase).fract();
        match family {
            0 => (TAU * x).sin(),
            1 => {
                if x < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            2 => 4.0 * (x - 0.5).abs() - 1.0,
            3 => 2.0 * x - 1.0,
            _ => {
                if x < 0.15 {
                    2.0
                } else {
                    -0.35
                }
            }
        }
    }
}

/// `count` segments per class, interleaved by class, with one-hot targets.
///
/// Each segment is its class waveform with a random phase, an amplitude in
/// `[0.8, 1.2]` and Gaussian noise of standard deviation 0.1.
pub fn labeled_segments(classes: usize, length: usize, count: usize, seed: u64) -> Result<SeriesDataset> {
    positive("class count", classes)?;
    positive("segment length", length)?;
    positive("segments per class", count)?;
    let mut rng = seeded_rng(seed);
    let n = classes * count;
    let mut inputs = Vec::with_capacity(n * length);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let f = waveform(class, rng.gen_range(0.0..1.0));
        let amp = rng.gen_range(0.8..1.2);
        for t in 0..length {
            let noise: f64 = StandardNormal.sample(&mut rng);
            inputs.push(amp * f(t as f64 / length as f64) + 0.1 * noise);
        }
        ids.push(class);
    }
    SeriesDataset::new(
        Tensor::new(&[n, length, 1], inputs)?,
        one_hot(&ids, classes)?,
        format!("synthetic segments classes={classes} length={length} count={count} seed={seed}"),
    )
}

/// Multichannel periodic traffic with injected anomalous rows.
///
/// Exactly `round(rate * length)` rows, placed by `seed`, get a level shift
/// of 4 to 6 on a random half of the features. Returns the `[length,
/// features]` series and the per-row labels.
pub fn traffic_with_anomalies(features: usize, length: usize, rate: f64, seed: u64) -> Result<(Tensor, Vec<bool>)> {
    positive("feature count", features)?;
    positive("length", length)?;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Param(format!("anomaly rate must lie in [0, 1), got {rate}")));
    }
    let mut rng = seeded_rng(seed);
    let base: Vec<(f64, f64, f64)> = (0..features)
        .map(|_| (rng.gen_range(8.0..24.0), rng.gen_range(0.5..1.5), rng.gen_range(0.0..TAU)))
        .collect();
    let mut data = Vec::with_capacity(length * features);
    for t in 0..length {
        for &(period, amp, phase) in &base {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(amp * (TAU * t as f64 / period + phase).sin() + 0.05 * noise);
        }
    }
    let k = (rate * length as f64).round() as usize;
    let mut labels = vec![false; length];
    for row in sample(&mut rng, length, k).into_vec() {
        labels[row] = true;
        for f in sample(&mut rng, features, features.div_ceil(2)).into_vec() {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            data[row * features + f] += sign * rng.gen_range(4.0..6.0);
        }
    }
    Ok((Tensor::new(&[length, features], data)?, labels))
}
