//! Binary classification metrics. The positive class is label 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{welch_t, TTest};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// The six reported metrics. Ranking metrics are `None` (serialized as
/// `null`) when only one class is present.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub confusion: Confusion,
}

impl EvalResult {
    /// `(name, value)` pairs in report order; undefined values become NaN.
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("accuracy", self.accuracy),
            ("recall", self.recall),
            ("precision", self.precision),
            ("f1", self.f1),
            ("roc_auc", self.roc_auc.unwrap_or(f64::NAN)),
            ("pr_auc", self.pr_auc.unwrap_or(f64::NAN)),
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "need equal, non-zero numbers of scores and labels, got {} and {}",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("score is NaN".into()));
    }
    Ok(())
}

/// Cumulative `(tp, fp)` after each distinct score, sweeping the threshold
/// from high to low. Tied scores enter together.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(k + 1)
            .map_or(true, |&j| scores[j] != scores[i]);
        if last_of_group {
            points.push((tp, fp));
        }
    }
    points
}

/// Area under the ROC curve by the trapezoidal rule.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let (mut area, mut prev) = (0.0, (0usize, 0usize));
    for (tp, fp) in sweep(scores, labels) {
        area += (fp - prev.1) as f64 * (tp + prev.0) as f64 / 2.0;
        prev = (tp, fp);
    }
    Ok(Some(area / (pos * neg) as f64))
}

/// Area under the precision–recall curve, step-wise:
/// `Σ (R_k − R_{k−1}) · P_k` over distinct thresholds.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Ok(None);
    }
    let (mut area, mut prev_tp) = (0.0, 0usize);
    for (tp, fp) in sweep(scores, labels) {
        if tp > prev_tp {
            area += (tp - prev_tp) as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        }
        prev_tp = tp;
    }
    Ok(Some(area))
}

/// All six metrics; a sample is predicted positive when `score > threshold`.
pub fn classification_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalResult> {
    check(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalResult {
        accuracy: ratio(c.tp + c.tn, c.total()),
        recall,
        precision,
        f1,
        roc_auc: roc_auc(scores, labels)?,
        pr_auc: pr_auc(scores, labels)?,
        confusion: c,
    })
}

/// Welch t-test between per-seed metric values of two model variants.
pub fn bootstrap_compare(run_metrics_a: &[f64], run_metrics_b: &[f64]) -> Result<TTest> {
    if run_metrics_a.len() < 2 || run_metrics_b.len() < 2 {
        return Err(Error::Contract("comparison needs at least 2 seeds per model".into()));
    }
    welch_t(run_metrics_a, run_metrics_b)
}
