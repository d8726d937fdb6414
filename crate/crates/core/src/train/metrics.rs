use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Task metrics reported on test splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Mae,
    Auc,
}

impl Metric {
    /// `accuracy` takes class scores against one-hot rows or class ids,
    /// `mae` matching tensors, `auc` scores against 0/1 labels.
    pub fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(pred, target),
            Metric::Mae => mae(pred, target),
            Metric::Auc => {
                let labels: Vec<bool> = target.data().iter().map(|&v| v > 0.5).collect();
                auc(pred.data(), &labels)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mae => "mae",
            Metric::Auc => "auc",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "mae" => Ok(Metric::Mae),
            "auc" => Ok(Metric::Auc),
            other => Err(Error::Param(format!("unknown metric '{other}'"))),
        }
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(scores: &Tensor, target: &Tensor) -> Result<f64> {
    let [n, classes] = scores.shape() else {
        return Err(shape_err!("accuracy expects [n, classes] scores, got {:?}", scores.shape()));
    };
    if *n == 0 {
        return Err(Error::MetricUndefined("accuracy of zero samples".into()));
    }
    let truth: Vec<usize> = match target.shape() {
        [m] if m == n => target.data().iter().map(|&v| v as usize).collect(),
        s if s == scores.shape() => target.data().chunks(*classes).map(argmax).collect(),
        s => return Err(shape_err!("accuracy targets {s:?} do not match scores {:?}", scores.shape())),
    };
    let hits = scores
        .data()
        .chunks(*classes)
        .zip(&truth)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    Ok(hits as f64 / *n as f64)
}

pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("mae of {:?} against {:?}", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(Error::MetricUndefined("mae of an empty tensor".into()));
    }
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Rank-based area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(shape_err!("auc got {} scores and {} labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("auc needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MetricUndefined("auc over NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group shares its mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_argmax_hits() {
        let scores = Tensor::new(&[4, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]).unwrap();
        let ids = Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(accuracy(&scores, &ids).unwrap(), 0.75);
    }

    #[test]
    fn auc_edges() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.3, 0.3, 0.1, 0.7, 0.5, 0.3];
        let labels = [true, false, false, true, false, true];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-15);
    }
}
