use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};

/// Marginals for the clinical attributes. Defaults follow the demographic
/// table of the reference colon-cancer trial cohort (424 patients, 431 slides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Demographics {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    /// Arithmetic mean of the log-normal household income.
    pub income_mean: f64,
    /// Standard deviation of log income.
    pub income_log_sd: f64,
    /// `(weight, mean, sd)` per BMI mixture component.
    pub bmi_components: Vec<(f64, f64, f64)>,
    pub male_fraction: f64,
    /// Fraction receiving 5FU/LV (FL) rather than irinotecan + 5FU/LV (IFL).
    pub fl_fraction: f64,
    /// Relative frequencies of grades 1, 2, 3.
    pub grade_weights: [f64; 3],
    /// Relative frequencies of the seven tumour sites, in [`super::LOCATIONS`] order.
    pub location_weights: [f64; 7],
}

impl Default for Demographics {
    fn default() -> Self {
        Self {
            age_mean: 60.47,
            age_sd: 10.0,
            age_min: 30.0,
            age_max: 90.0,
            income_mean: 43194.59,
            income_log_sd: 0.4,
            bmi_components: vec![(0.35, 22.0, 1.6), (0.40, 27.5, 1.3), (0.25, 33.5, 2.5)],
            male_fraction: 240.0 / 431.0,
            fl_fraction: 219.0 / 431.0,
            grade_weights: [20.0, 300.0, 108.0],
            location_weights: [101.0, 64.0, 28.0, 46.0, 19.0, 19.0, 149.0],
        }
    }
}

/// Everything that determines a synthetic cohort, bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Generic (foundation-model stand-in) feature width.
    pub d_g: usize,
    /// Raw morphology-channel feature width.
    pub d_m: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    /// Log hazard ratio per standard deviation of the risk-morphology burden.
    pub signal_strength: f64,
    /// Log hazard ratio added for patients older than 65.
    pub age_effect: f64,
    /// Fraction of patients subject to administrative censoring.
    pub censoring_rate: f64,
    pub censor_window: (f64, f64),
    pub weibull_shape: f64,
    /// When set, the baseline Weibull scale is solved so the expected
    /// five-year death fraction among classifiable patients hits this value.
    pub target_death_fraction: Option<f64>,
    /// Baseline Weibull scale in months, used when no target is set.
    pub baseline_scale: f64,
    /// Beta distribution parameters of the planted burden.
    pub burden_alpha: f64,
    pub burden_beta: f64,
    pub feature_noise: f64,
    pub prototype_scale: f64,
    /// Minimum pairwise prototype distance in units of `feature_noise`.
    pub min_prototype_separation: f64,
    pub demographics: Demographics,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 424,
            d_g: 16,
            d_m: 16,
            patches_min: 8,
            patches_max: 64,
            signal_strength: 4.0,
            age_effect: 0.0,
            censoring_rate: 0.3,
            censor_window: (12.0, 72.0),
            weibull_shape: 1.5,
            target_death_fraction: Some(103.0 / 424.0),
            baseline_scale: 120.0,
            burden_alpha: 0.5,
            burden_beta: 0.5,
            feature_noise: 1.0,
            prototype_scale: 1.0,
            min_prototype_separation: 2.0,
            demographics: Demographics::default(),
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(PrismError::config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(PrismError::config(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

fn weights(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(PrismError::config(format!(
            "{name} must be non-negative with a positive sum"
        )));
    }
    Ok(())
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(PrismError::config("n_patients must be at least 1"));
        }
        if self.d_g == 0 || self.d_m == 0 {
            return Err(PrismError::config("feature widths must be at least 1"));
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return Err(PrismError::config(format!(
                "patches range [{}, {}] is empty",
                self.patches_min, self.patches_max
            )));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return Err(PrismError::config(
                "signal_strength must be finite and >= 0",
            ));
        }
        if !self.age_effect.is_finite() {
            return Err(PrismError::config("age_effect must be finite"));
        }
        fraction("censoring_rate", self.censoring_rate)?;
        let (c0, c1) = self.censor_window;
        if !(c0.is_finite() && c1.is_finite() && 0.0 <= c0 && c0 < c1) {
            return Err(PrismError::config(
                "censor_window must satisfy 0 <= lo < hi",
            ));
        }
        positive("weibull_shape", self.weibull_shape)?;
        positive("baseline_scale", self.baseline_scale)?;
        if let Some(t) = self.target_death_fraction {
            if !(t > 0.0 && t < 1.0) {
                return Err(PrismError::config(format!(
                    "target_death_fraction must lie in (0, 1), got {t}"
                )));
            }
        }
        positive("burden_alpha", self.burden_alpha)?;
        positive("burden_beta", self.burden_beta)?;
        positive("feature_noise", self.feature_noise)?;
        positive("prototype_scale", self.prototype_scale)?;
        if !(self.min_prototype_separation.is_finite() && self.min_prototype_separation >= 0.0) {
            return Err(PrismError::config("min_prototype_separation must be >= 0"));
        }
        let d = &self.demographics;
        positive("age_sd", d.age_sd)?;
        if !(d.age_min < d.age_max) || d.age_min <= 0.0 {
            return Err(PrismError::config(
                "age clip range must be positive and non-empty",
            ));
        }
        positive("income_mean", d.income_mean)?;
        positive("income_log_sd", d.income_log_sd)?;
        if d.bmi_components.is_empty() {
            return Err(PrismError::config("bmi_components must not be empty"));
        }
        for &(w, m, s) in &d.bmi_components {
            if !(w.is_finite() && w >= 0.0) {
                return Err(PrismError::config("bmi component weight must be >= 0"));
            }
            positive("bmi component mean", m)?;
            positive("bmi component sd", s)?;
        }
        weights(
            "bmi weights",
            &d.bmi_components.iter().map(|c| c.0).collect::<Vec<_>>(),
        )?;
        fraction("male_fraction", d.male_fraction)?;
        fraction("fl_fraction", d.fl_fraction)?;
        weights("grade_weights", &d.grade_weights)?;
        weights("location_weights", &d.location_weights)?;
        Ok(())
    }

    pub fn burden_mean(&self) -> f64 {
        self.burden_alpha / (self.burden_alpha + self.burden_beta)
    }

    pub fn burden_sd(&self) -> f64 {
        let (a, b) = (self.burden_alpha, self.burden_beta);
        (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt()
    }

    /// Burden in population standard-deviation units; the covariate whose
    /// log hazard ratio is `signal_strength`.
    pub fn standardized_burden(&self, burden: f64) -> f64 {
        (burden - self.burden_mean()) / self.burden_sd()
    }
}
