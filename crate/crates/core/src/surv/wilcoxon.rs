//! Two-sided Wilcoxon signed-rank test for paired per-fold metrics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::classify::average_ranks;
use crate::error::{PrismError, Result};

/// Largest number of non-zero differences handled by the exact null.
pub const EXACT_MAX_N: usize = 20;
pub const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub n_nonzero: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Signed-rank test of `a` against `b`. Zero differences are dropped, tied
/// absolute differences share average ranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(PrismError::data(format!(
            "unpaired samples: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(PrismError::numeric("non-finite paired difference"));
    }
    if diffs.is_empty() {
        return Err(PrismError::data("all paired differences are zero"));
    }
    if diffs.len() < MIN_NONZERO {
        return Err(PrismError::data(format!(
            "need at least {MIN_NONZERO} non-zero differences, got {}",
            diffs.len()
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let n = diffs.len();
    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_two_sided(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (normal_two_sided(&ranks, w_plus), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        w_plus,
        n_nonzero: n,
        p_value,
        method,
    })
}

/// Exact null distribution of W⁺ by dynamic programming over doubled ranks,
/// which are integers even with average-rank ties.
fn exact_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (w_plus * 2.0).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=w2].iter().sum();
    let upper: u64 = counts[w2..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

/// Normal approximation with continuity and tie corrections.
fn normal_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - norm.cdf(z))).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_shift_six_pairs() {
        let a = [0.61, 0.72, 0.55, 0.69, 0.70, 0.64];
        let b: Vec<f64> = a.iter().map(|x| x + 0.01).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.p_value, 2.0 / 64.0);
    }

    #[test]
    fn five_pairs_minimum_p() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.5, 2.5, 3.5, 4.5, 5.5];
        assert_eq!(wilcoxon_signed_rank(&a, &b).unwrap().p_value, 0.0625);
    }

    #[test]
    fn identical_samples_rejected() {
        let a = [0.3, 0.4, 0.5, 0.6, 0.7];
        assert!(
            matches!(wilcoxon_signed_rank(&a, &a), Err(PrismError::Data(m)) if m.contains("zero"))
        );
        assert!(wilcoxon_signed_rank(&a, &a[..4]).is_err());
    }

    #[test]
    fn balanced_signs_give_p_one() {
        let a = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (1..=30).map(f64::from).collect();
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, x)| x + if i % 3 == 0 { -0.5 } else { 0.7 })
            .collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_value > 0.0 && r.p_value < 0.05, "{r:?}");
    }
}
