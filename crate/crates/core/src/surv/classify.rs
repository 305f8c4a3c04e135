//! Binary classification metrics for five-year outcome predictions.

use serde::Serialize;

use crate::error::{PrismError, Result};

fn check_pairs(probabilities: &[f64], labels: &[bool]) -> Result<()> {
    if probabilities.len() != labels.len() {
        return Err(PrismError::dim(format!(
            "{} scores but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.iter().any(|p| p.is_nan()) {
        return Err(PrismError::numeric("NaN score"));
    }
    Ok(())
}

/// Average 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// ROC area as the Mann-Whitney statistic P(s⁺ > s⁻) + ½ P(s⁺ = s⁻).
pub fn roc_auc(probabilities: &[f64], labels: &[bool]) -> Result<f64> {
    check_pairs(probabilities, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PrismError::data("ROC AUC needs both classes"));
    }
    let ranks = average_ranks(probabilities);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC operating points `(fpr, tpr)` from the strictest threshold down,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(probabilities: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_pairs(probabilities, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(PrismError::data("ROC curve needs both classes"));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = probabilities[order[i]];
        while i < order.len() && probabilities[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / n_neg, tp / n_pos));
    }
    Ok(pts)
}

/// Confusion-matrix summary. Percentages; `NaN` where a rate is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl BinaryMetrics {
    pub fn from_counts(
        tp: usize,
        fp: usize,
        tn: usize,
        fn_: usize,
        threshold: f64,
        auc: f64,
    ) -> Self {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                f64::NAN
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        Self {
            auc,
            accuracy: pct(tp + tn, tp + tn + fp + fn_),
            sensitivity: pct(tp, tp + fn_),
            specificity: pct(tn, tn + fp),
            threshold,
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

/// Predict positive (died within five years) when `probability >= threshold`.
pub fn confusion_metrics(
    probabilities: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<BinaryMetrics> {
    check_pairs(probabilities, labels)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PrismError::config(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in probabilities.iter().zip(labels) {
        match (p >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let auc = roc_auc(probabilities, labels).unwrap_or(f64::NAN);
    Ok(BinaryMetrics::from_counts(tp, fp, tn, fn_, threshold, auc))
}

/// Threshold maximising sensitivity + specificity (Youden's J) on a
/// validation set; ties resolve to the threshold closest to 0.5.
pub fn select_threshold(probabilities: &[f64], labels: &[bool]) -> Result<f64> {
    check_pairs(probabilities, labels)?;
    let mut candidates: Vec<f64> = probabilities.to_vec();
    candidates.push(0.5);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
    for &c in &candidates {
        let m = confusion_metrics(probabilities, labels, c.clamp(0.0, 1.0))?;
        if m.sensitivity.is_nan() || m.specificity.is_nan() {
            return Err(PrismError::data("threshold selection needs both classes"));
        }
        let j = m.sensitivity + m.specificity;
        if j > best.0 || (j == best.0 && (c - 0.5).abs() < (best.1 - 0.5).abs()) {
            best = (j, c);
        }
    }
    Ok(best.1.clamp(0.0, 1.0))
}
