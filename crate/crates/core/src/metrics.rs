//! Binary classification metrics with class 1 (anomalous) as the positive
//! class.
//!
//! Ratios are formed in exact rational arithmetic and rounded to `f64` once,
//! so algebraically equal quantities (support-weighted recall and accuracy,
//! for instance) come out bit-identical.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

type Q = Ratio<u128>;

/// 2×2 confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::param(format!(
            "confusion: {} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => cm.tp += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fn_ += 1,
            _ => return Err(Error::param(format!("confusion: labels must be 0/1, got ({t}, {p})"))),
        }
    }
    Ok(cm)
}

/// How per-class precision/recall/F1 are reduced to one number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Positive class only.
    Binary,
    /// Per-class values averaged with class-support weights.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> Q {
    if den == 0 {
        Q::from_integer(0)
    } else {
        Q::new(num as u128, den as u128)
    }
}

fn to_f64(q: Q) -> f64 {
    // Reduced numerators and denominators here stay far below 2^53 for any
    // realistic count, so each conversion is exact and the division rounds once.
    *q.numer() as f64 / *q.denom() as f64
}

/// Exact precision, recall and F1 of one class.
fn class_prf(tp: u64, fp: u64, fn_: u64) -> (Q, Q, Q) {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    (p, r, f1)
}

/// Accuracy, precision, recall and F1. A zero denominator yields 0.
pub fn scalar_metrics(cm: &ConfusionMatrix, mode: Averaging) -> Result<ScalarMetrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::param("scalar_metrics: empty confusion matrix"));
    }
    let accuracy = ratio(cm.tp + cm.tn, n);
    let (p, r, f1) = match mode {
        Averaging::Binary => class_prf(cm.tp, cm.fp, cm.fn_),
        Averaging::Weighted => {
            let (p1, r1, f1_1) = class_prf(cm.tp, cm.fp, cm.fn_);
            let (p0, r0, f1_0) = class_prf(cm.tn, cm.fn_, cm.fp);
            let w1 = ratio(cm.positives(), n);
            let w0 = ratio(cm.negatives(), n);
            (w1 * p1 + w0 * p0, w1 * r1 + w0 * r0, w1 * f1_1 + w0 * f1_0)
        }
    };
    Ok(ScalarMetrics {
        accuracy: to_f64(accuracy),
        precision: to_f64(p),
        recall: to_f64(r),
        f1: to_f64(f1),
    })
}

fn class_counts(y_true: &[u8]) -> Result<(u64, u64)> {
    let mut pos = 0u64;
    let mut neg = 0u64;
    for &y in y_true {
        match y {
            1 => pos += 1,
            0 => neg += 1,
            other => return Err(Error::param(format!("auc: label {other} is not 0/1"))),
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both classes in y_true".to_string(),
        ));
    }
    Ok((pos, neg))
}

/// ROC AUC as an exact fraction: the probability that a random positive
/// outscores a random negative, ties counting one half (Mann-Whitney U over
/// `n_pos · n_neg`).
pub fn auc_roc_exact<S: Scalar>(y_true: &[u8], scores: &[S]) -> Result<Ratio<u128>> {
    if y_true.len() != scores.len() {
        return Err(Error::param("auc: labels and scores differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("auc: scores must be finite"));
    }
    let (pos, neg) = class_counts(y_true)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Twice the positive rank sum, using mid-ranks for ties (ranks from 1).
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid_rank = (i + 1 + j + 1) as u128;
        let group_pos = order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as u128;
        twice_rank_sum += twice_mid_rank * group_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Ratio::new(twice_u, 2 * p * n))
}

/// ROC AUC via the rank statistic.
pub fn auc_roc<S: Scalar>(y_true: &[u8], scores: &[S]) -> Result<f64> {
    auc_roc_exact(y_true, scores).map(to_f64)
}

/// ROC AUC by sweeping every distinct threshold from high to low and
/// integrating TPR over FPR with the trapezoid rule, in floating point.
///
/// Independent of [`auc_roc`]; the two agree to rounding error.
pub fn auc_roc_trapezoid<S: Scalar>(y_true: &[u8], scores: &[S]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::param("auc: labels and scores differ in length"));
    }
    let (pos, neg) = class_counts(y_true)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut area = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Hard labels from anomaly scores: 1 when `score > threshold`.
pub fn threshold_predictions<S: Scalar>(scores: &[S], threshold: S) -> Vec<u8> {
    scores.iter().map(|&s| (s > threshold) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 0, tn: 2, fn_: 1 });
        let perfect = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((perfect.fp, perfect.fn_), (0, 0));
        let flipped = confusion(&[1, 1, 0, 0], &[0, 1, 1, 1]).unwrap();
        assert_eq!(flipped, ConfusionMatrix { tp: 1, fp: 2, tn: 0, fn_: 1 });
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn flipping_predictions_swaps_cells() {
        let t = [1, 1, 0, 0, 1, 0];
        let p = [1, 0, 0, 1, 1, 0];
        let flipped: Vec<u8> = p.iter().map(|&x| 1 - x).collect();
        let a = confusion(&t, &p).unwrap();
        let b = confusion(&t, &flipped).unwrap();
        assert_eq!((a.tp, a.tn), (b.fn_, b.fp));
        assert_eq!((a.fn_, a.fp), (b.tp, b.tn));
    }

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix { tp: 2, fp: 1, tn: 6, fn_: 1 };
        let m = scalar_metrics(&cm, Averaging::Binary).unwrap();
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 2.0 / 3.0);
        assert_eq!(m.f1, 2.0 / 3.0);
    }

    #[test]
    fn zero_denominators() {
        let cm = ConfusionMatrix { tp: 0, fp: 0, tn: 5, fn_: 3 };
        let m = scalar_metrics(&cm, Averaging::Binary).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(scalar_metrics(&ConfusionMatrix::default(), Averaging::Binary).is_err());
    }

    #[test]
    fn weighted_recall_is_accuracy() {
        let cm = ConfusionMatrix { tp: 17, fp: 4, tn: 70, fn_: 9 };
        let m = scalar_metrics(&cm, Averaging::Weighted).unwrap();
        assert_eq!(m.recall, m.accuracy);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[1, 1, 0, 0], &[0.9, 0.8, 0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0, 1, 0, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0, 1, 0, 1], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(auc_roc_trapezoid(&[0, 1, 0, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.75);
        assert!(matches!(auc_roc(&[1, 1], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold_predictions(&[0.5, 0.51, 0.2], 0.5), vec![0, 1, 0]);
    }
}
