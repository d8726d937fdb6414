use super::{windowize, SeriesDataset};
use crate::error::{shape_err, Error, Result};
use crate::graph::Model;
use crate::tensor::Tensor;
use crate::train::{auc, predict_all};

/// Anomaly scores, top-K labels and the AUC of the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub scores: Vec<f64>,
    pub predicted: Vec<bool>,
    pub auc: f64,
}

/// Mean absolute forecast error of each window over its predicted steps.
pub fn anomaly_scores(model: &Model, windows: &SeriesDataset, chunk: usize) -> Result<Vec<f64>> {
    let pred = predict_all(model, &windows.inputs, chunk)?;
    if pred.shape() != windows.targets.shape() {
        return Err(shape_err!(
            "model forecasts {:?} but window targets are {:?}",
            pred.shape(),
            windows.targets.shape()
        ));
    }
    let per = pred.len() / windows.len().max(1);
    Ok(pred
        .data()
        .chunks(per)
        .zip(windows.targets.data().chunks(per))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / per as f64)
        .collect())
}

/// Labels exactly `k` entries: the largest scores, earlier index first on ties.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<bool>> {
    if k > scores.len() {
        return Err(Error::Param(format!("cannot label {k} of {} windows", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps the earlier index ahead within equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![false; scores.len()];
    for &i in &order[..k] {
        out[i] = true;
    }
    Ok(out)
}

/// Forecast windows over a series with per-row anomaly labels. A window is
/// flagged when any of its `steps` forecast rows is anomalous.
pub fn labeled_windows(
    series: &Tensor,
    row_labels: &[bool],
    input: usize,
    steps: usize,
    stride: usize,
) -> Result<(SeriesDataset, Vec<bool>)> {
    if row_labels.len() != series.shape()[0] {
        return Err(shape_err!("{} row labels for {} rows", row_labels.len(), series.shape()[0]));
    }
    let windows = windowize(series, input, steps, stride)?;
    let flags = (0..windows.len())
        .map(|j| {
            let at = j * stride + input;
            row_labels[at..at + steps].iter().any(|&l| l)
        })
        .collect();
    Ok((windows, flags))
}

/// Stride-one forecast windows that touch no anomalous row, for training a
/// model on normal behaviour only.
pub fn normal_windows(series: &Tensor, row_labels: &[bool], input: usize, steps: usize) -> Result<SeriesDataset> {
    if row_labels.len() != series.shape()[0] {
        return Err(shape_err!("{} row labels for {} rows", row_labels.len(), series.shape()[0]));
    }
    let windows = windowize(series, input, steps, 1)?;
    let keep: Vec<usize> = (0..windows.len())
        .filter(|&j| !row_labels[j..j + input + steps].iter().any(|&l| l))
        .collect();
    if keep.is_empty() {
        return Err(Error::Data("every window touches an anomaly".into()));
    }
    windows.subset(&keep)
}

/// Scores every window with `model`, labels the top `k` and measures AUC
/// against `labels`.
pub fn anomaly_harness(model: &Model, windows: &SeriesDataset, labels: &[bool], k: usize) -> Result<AnomalyReport> {
    if labels.len() != windows.len() {
        return Err(shape_err!("{} labels for {} windows", labels.len(), windows.len()));
    }
    if k > windows.len() {
        return Err(Error::Param(format!("cannot label {k} of {} windows", windows.len())));
    }
    let scores = anomaly_scores(model, windows, 256)?;
    let predicted = top_k(&scores, k)?;
    let auc = auc(&scores, labels)?;
    Ok(AnomalyReport {
        scores,
        predicted,
        auc,
    })
}
