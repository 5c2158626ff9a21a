//! Binary classification metrics over predicted damage probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Score thresholds; a score equal to a threshold counts as a positive call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub accuracy: f64,
    /// Damaged samples scoring below this count as false negatives.
    pub strict_positive: f64,
    /// Undamaged samples scoring at or above this count as false positives.
    pub strict_negative: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            accuracy: 0.5,
            strict_positive: 0.95,
            strict_negative: 0.10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub positives: usize,
    pub negatives: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`; empty for a single-class set.
    pub roc: Vec<(f64, f64)>,
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub fn_at_95: usize,
    pub fp_at_10: usize,
    pub precision_at_full_recall: Option<f64>,
    pub full_recall_threshold: Option<f64>,
    pub mean_bce: f64,
    pub confusion: Confusion,
}

const BCE_CLAMP: f64 = 1e-7;

pub fn mean_bce(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    total / scores.len() as f64
}

/// ROC points for thresholds at every distinct score, highest first.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 { tp += 1 } else { fp += 1 }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    points
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_auc(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8], th: &Thresholds) -> Result<MetricsReport> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty set".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is not finite")));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Argument(format!("label {i} is not binary")));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    let roc = roc_curve(scores, labels);
    let auc = (!roc.is_empty()).then(|| trapezoid_auc(&roc));
    let confusion = Confusion::at(scores, labels, th.accuracy);
    let fn_at_95 = Confusion::at(scores, labels, th.strict_positive).fn_;
    let fp_at_10 = Confusion::at(scores, labels, th.strict_negative).fp;
    let full_recall_threshold = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(&s, _)| s)
        .min_by(f64::total_cmp);
    let precision_at_full_recall = full_recall_threshold.map(|t| {
        let c = Confusion::at(scores, labels, t);
        c.tp as f64 / (c.tp + c.fp) as f64
    });
    Ok(MetricsReport {
        n: scores.len(),
        positives,
        negatives,
        roc,
        auc,
        accuracy: (confusion.tp + confusion.tn) as f64 / scores.len() as f64,
        fn_at_95,
        fp_at_10,
        precision_at_full_recall,
        full_recall_threshold,
        mean_bce: mean_bce(scores, labels),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let r = evaluate_scores(&[0.99, 0.9, 0.2, 0.01], &[1, 1, 0, 0], &Thresholds::default()).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.precision_at_full_recall, Some(1.0));
        assert_eq!(r.fn_at_95, 1);
        assert_eq!(r.fp_at_10, 1);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn reversed_scores() {
        let r = evaluate_scores(&[0.0, 0.0, 1.0, 1.0], &[1, 1, 0, 0], &Thresholds::default()).unwrap();
        assert_eq!(r.auc, Some(0.0));
        assert_eq!(r.precision_at_full_recall, Some(0.5));
    }

    #[test]
    fn small_worked_case() {
        let r = evaluate_scores(&[0.9, 0.8, 0.7, 0.1], &[1, 1, 0, 0], &Thresholds::default()).unwrap();
        assert_eq!(r.full_recall_threshold, Some(0.8));
        assert_eq!(r.precision_at_full_recall, Some(1.0));
        assert_eq!(r.fn_at_95, 2);
        assert_eq!(r.fp_at_10, 2);
        assert_eq!(r.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 0 });
        assert_eq!(r.auc, Some(1.0));
    }

    #[test]
    fn ties_share_one_roc_step() {
        let roc = roc_curve(&[0.5, 0.5], &[1, 0]);
        assert_eq!(roc, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(trapezoid_auc(&roc), 0.5);
    }

    #[test]
    fn single_class_has_no_auc() {
        let r = evaluate_scores(&[0.3, 0.6], &[0, 0], &Thresholds::default()).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.precision_at_full_recall, None);
        assert_eq!(r.fp_at_10, 2);
    }
}
