//! Single-covariate Cox proportional-hazards fit.

use serde::{Deserialize, Serialize};

use super::km::{check_survival_inputs, kaplan_meier, SurvivalCurve};
use crate::error::{PrismError, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;
const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

impl std::str::FromStr for Ties {
    type Err = PrismError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "efron" => Ok(Ties::Efron),
            "breslow" => Ok(Ties::Breslow),
            other => Err(PrismError::config(format!("unknown ties method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub beta: f64,
    pub std_err: f64,
    pub hazard_ratio: f64,
    pub ci95: (f64, f64),
    pub ties: Ties,
    pub iterations: usize,
    pub converged: bool,
    /// Maximised partial log-likelihood.
    pub log_likelihood: f64,
    pub diagnostic: Option<String>,
}

impl CoxFit {
    /// Wald statistic β̂ / se.
    pub fn wald_z(&self) -> f64 {
        self.beta / self.std_err
    }

    fn flagged(beta: f64, ties: Ties, loglik: f64, why: &str) -> Self {
        Self {
            beta,
            std_err: f64::INFINITY,
            hazard_ratio: beta.exp(),
            ci95: (0.0, f64::INFINITY),
            ties,
            iterations: 0,
            converged: false,
            log_likelihood: loglik,
            diagnostic: Some(why.to_string()),
        }
    }
}

/// Groups of subjects sharing an event time, in ascending time order.
struct RiskSets {
    /// subject indices sorted by time, descending
    order: Vec<usize>,
    /// (start, end) ranges into `order` of subjects tied at one time, in
    /// descending time order
    blocks: Vec<(usize, usize)>,
}

impl RiskSets {
    fn new(times: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let t = times[order[i]];
            let start = i;
            while i < order.len() && times[order[i]] == t {
                i += 1;
            }
            blocks.push((start, i));
        }
        Self { order, blocks }
    }
}

/// Partial log-likelihood with its first and second derivative in `beta`.
fn derivatives(
    beta: f64,
    x: &[f64],
    events: &[bool],
    sets: &RiskSets,
    ties: Ties,
) -> (f64, f64, f64) {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (mut loglik, mut score, mut info) = (0.0, 0.0, 0.0);
    // sweep from the latest time backwards so the risk set only grows
    for &(start, end) in &sets.blocks {
        let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
        let mut deaths = 0usize;
        for &i in &sets.order[start..end] {
            let w = (beta * x[i]).exp();
            s0 += w;
            s1 += w * x[i];
            s2 += w * x[i] * x[i];
            if events[i] {
                deaths += 1;
                d0 += w;
                d1 += w * x[i];
                d2 += w * x[i] * x[i];
                loglik += beta * x[i];
                score += x[i];
            }
        }
        for l in 0..deaths {
            let frac = match ties {
                Ties::Efron => l as f64 / deaths as f64,
                Ties::Breslow => 0.0,
            };
            let a0 = s0 - frac * d0;
            let a1 = s1 - frac * d1;
            let a2 = s2 - frac * d2;
            let mean = a1 / a0;
            loglik -= a0.ln();
            score -= mean;
            info += a2 / a0 - mean * mean;
        }
    }
    (loglik, score, info)
}

/// Partial log-likelihood of `beta` for covariate `scores`.
pub fn partial_log_likelihood(
    beta: f64,
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    ties: Ties,
) -> Result<f64> {
    check_survival_inputs(times, events)?;
    if scores.len() != times.len() {
        return Err(PrismError::dim("scores and times differ in length"));
    }
    Ok(derivatives(beta, scores, events, &RiskSets::new(times), ties).0)
}

/// Newton-Raphson maximisation of the partial likelihood over a scalar β.
///
/// Degenerate inputs (fewer than two events, constant scores, monotone
/// likelihood) return a fit with `converged = false` and a diagnostic rather
/// than an error.
pub fn cox_fit(scores: &[f64], times: &[f64], events: &[bool], ties: Ties) -> Result<CoxFit> {
    check_survival_inputs(times, events)?;
    if scores.len() != times.len() {
        return Err(PrismError::dim(format!(
            "{} scores for {} subjects",
            scores.len(),
            times.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PrismError::numeric("risk scores must be finite"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    // centring leaves β̂ unchanged and keeps exp(βx) in range
    let x: Vec<f64> = scores.iter().map(|s| s - mean).collect();
    let sets = RiskSets::new(times);
    let n_events = events.iter().filter(|&&e| e).count();

    if n_events < 2 {
        let ll = derivatives(0.0, &x, events, &sets, ties).0;
        return Ok(CoxFit::flagged(0.0, ties, ll, "fewer than two events"));
    }
    if x.iter().all(|&v| v == 0.0) {
        let ll = derivatives(0.0, &x, events, &sets, ties).0;
        return Ok(CoxFit::flagged(
            0.0,
            ties,
            ll,
            "risk scores have zero variance",
        ));
    }

    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = derivatives(beta, &x, events, &sets, ties);
    let mut converged = false;
    let mut iterations = 0;
    let mut diagnostic = None;
    while iterations < MAX_ITER {
        iterations += 1;
        if !(info > 0.0) {
            diagnostic = Some("information vanished (perfect separation)".to_string());
            break;
        }
        let mut step = score / info;
        let mut next = beta + step;
        let (mut nll, mut nscore, mut ninfo) = derivatives(next, &x, events, &sets, ties);
        // step halving keeps the likelihood non-decreasing
        let mut halvings = 0;
        while !(nll.is_finite() && nll >= ll - 1e-12 * ll.abs()) && halvings < 30 {
            step *= 0.5;
            next = beta + step;
            (nll, nscore, ninfo) = derivatives(next, &x, events, &sets, ties);
            halvings += 1;
        }
        let delta = next - beta;
        beta = next;
        (ll, score, info) = (nll, nscore, ninfo);
        if delta.abs() < TOL {
            converged = true;
            break;
        }
    }
    let std_err = if info > 0.0 {
        info.sqrt().recip()
    } else {
        f64::INFINITY
    };
    if converged && std_err > 1e4 * (1.0 + beta.abs()) {
        converged = false;
        diagnostic = Some("monotone likelihood: coefficient may be infinite".to_string());
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!(
            "no convergence after {MAX_ITER} iterations (monotone likelihood?)"
        ));
    }
    if !beta.is_finite() {
        return Err(PrismError::numeric("Cox coefficient diverged"));
    }
    Ok(CoxFit {
        beta,
        std_err,
        hazard_ratio: beta.exp(),
        ci95: ((beta - Z95 * std_err).exp(), (beta + Z95 * std_err).exp()),
        ties,
        iterations,
        converged,
        log_likelihood: ll,
        diagnostic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RiskCut {
    #[default]
    Median,
    Value(f64),
}

/// Cox fit on the high/low risk indicator plus both groups' KM curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomizedCox {
    pub fit: CoxFit,
    pub cut: f64,
    pub n_high: usize,
    pub n_low: usize,
    pub high: SurvivalCurve,
    pub low: SurvivalCurve,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Split patients at `cut` (`prob > cut` is high risk) and fit a Cox model on
/// the group indicator.
pub fn dichotomized_cox(
    probabilities: &[f64],
    times: &[f64],
    events: &[bool],
    cut: RiskCut,
    ties: Ties,
) -> Result<DichotomizedCox> {
    check_survival_inputs(times, events)?;
    if probabilities.len() != times.len() {
        return Err(PrismError::dim("probabilities and times differ in length"));
    }
    let cut = match cut {
        RiskCut::Median => median(probabilities),
        RiskCut::Value(v) => v,
    };
    let high: Vec<bool> = probabilities.iter().map(|&p| p > cut).collect();
    let n_high = high.iter().filter(|&&h| h).count();
    let n_low = high.len() - n_high;
    if n_high < 2 || n_low < 2 {
        return Err(PrismError::data(format!(
            "degenerate risk cut {cut}: {n_high} high vs {n_low} low"
        )));
    }
    let indicator: Vec<f64> = high.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    let fit = cox_fit(&indicator, times, events, ties)?;
    let pick = |want: bool| -> (Vec<f64>, Vec<bool>) {
        high.iter()
            .zip(times.iter().zip(events))
            .filter(|(h, _)| **h == want)
            .map(|(_, (&t, &e))| (t, e))
            .unzip()
    };
    let (th, eh) = pick(true);
    let (tl, el) = pick(false);
    Ok(DichotomizedCox {
        fit,
        cut,
        n_high,
        n_low,
        high: kaplan_meier(&th, &eh)?,
        low: kaplan_meier(&tl, &el)?,
    })
}
