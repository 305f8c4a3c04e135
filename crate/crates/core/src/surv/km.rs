use serde::Serialize;

use crate::error::{PrismError, Result};

/// Product-limit survival estimate as a right-continuous step function.
///
/// One entry per distinct observed time (deaths or censorings); `survival[i]`
/// is the estimate just after `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
    pub censored: Vec<usize>,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    /// Ŝ(t), equal to 1 before the first observed time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub(crate) fn check_survival_inputs(times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() {
        return Err(PrismError::dim(format!(
            "{} times but {} event flags",
            times.len(),
            events.len()
        )));
    }
    if times.is_empty() {
        return Err(PrismError::data("no subjects"));
    }
    if let Some(i) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
        return Err(PrismError::data(format!(
            "subject {i} has invalid time {}",
            times[i]
        )));
    }
    Ok(())
}

/// Kaplan-Meier estimator. Subjects censored at `t` are still at risk at `t`.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    check_survival_inputs(times, events)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut curve = SurvivalCurve {
        times: Vec::new(),
        at_risk: Vec::new(),
        deaths: Vec::new(),
        censored: Vec::new(),
        survival: Vec::new(),
    };
    let mut n_risk = times.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut c = 0;
        while i < order.len() && times[order[i]] == t {
            if events[order[i]] {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            s *= (n_risk - d) as f64 / n_risk as f64;
        }
        curve.times.push(t);
        curve.at_risk.push(n_risk);
        curve.deaths.push(d);
        curve.censored.push(c);
        curve.survival.push(s);
        n_risk -= d + c;
    }
    Ok(curve)
}
