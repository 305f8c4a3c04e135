use super::km::check_survival_inputs;
use crate::error::{PrismError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcordanceCounts {
    pub concordant: f64,
    pub tied_score: f64,
    pub comparable: u64,
}

/// Harrell's pair counts. A pair is comparable when the subject with the
/// strictly shorter time had the event; higher risk score for that subject is
/// concordant, equal scores count as half.
pub fn concordance_counts(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
) -> Result<ConcordanceCounts> {
    check_survival_inputs(times, events)?;
    if scores.len() != times.len() {
        return Err(PrismError::dim("scores and times differ in length"));
    }
    let mut out = ConcordanceCounts {
        concordant: 0.0,
        tied_score: 0.0,
        comparable: 0,
    };
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                out.comparable += 1;
                if scores[i] > scores[j] {
                    out.concordant += 1.0;
                } else if scores[i] == scores[j] {
                    out.tied_score += 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Harrell's concordance index over all comparable pairs.
pub fn concordance_index(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let c = concordance_counts(scores, times, events)?;
    if c.comparable == 0 {
        return Err(PrismError::data(
            "no comparable pairs for the concordance index",
        ));
    }
    Ok((c.concordant + 0.5 * c.tied_score) / c.comparable as f64)
}
