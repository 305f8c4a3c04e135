use rand_distr::{Beta, Exp1};

use super::{
    is_risk_class, patient_id, ClinicalRecord, Cohort, CohortConfig, PatchFeatureBag, Sex,
    Treatment, FIVE_YEARS, N_CLASSES, RISK_CLASSES,
};
use crate::error::{PrismError, Result};
use crate::numcore::Matrix;
use crate::rng::SeedRng;

/// Class-conditional feature means shared by every bag of a cohort and by the
/// labelled patch dataset used to train the morphology classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `13 × d_m`
    pub morph: Matrix,
    /// `d_g × d_m` with orthonormal columns (or rows when `d_g < d_m`).
    pub rotation: Matrix,
    pub noise: f64,
}

impl Prototypes {
    pub fn from_config(config: &CohortConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::new(config.seed).split("prototypes");
        let d = config.d_m;
        let min_dist = config.min_prototype_separation * config.feature_noise;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(N_CLASSES);
        for c in 0..N_CLASSES {
            let mut tries = 0;
            loop {
                let cand: Vec<f64> = (0..d)
                    .map(|_| config.prototype_scale * rng.normal())
                    .collect();
                let ok = rows.iter().all(|r| dist(r, &cand) >= min_dist);
                if ok {
                    rows.push(cand);
                    break;
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(PrismError::config(format!(
                        "cannot place prototype {c} at separation {min_dist}; raise prototype_scale or d_m"
                    )));
                }
            }
        }
        let morph = Matrix::from_rows(&rows)?;
        let rotation = random_orthogonal(config.d_g, config.d_m, &mut rng)?;
        Ok(Self {
            morph,
            rotation,
            noise: config.feature_noise,
        })
    }

    pub fn d_m(&self) -> usize {
        self.morph.cols()
    }

    pub fn d_g(&self) -> usize {
        self.rotation.rows()
    }

    /// Smallest distance between two class means.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..N_CLASSES {
            for b in a + 1..N_CLASSES {
                best = best.min(dist(self.morph.row(a), self.morph.row(b)));
            }
        }
        best
    }

    /// Draw one patch of class `c`: (generic, morph) feature rows.
    fn sample_patch(&self, c: usize, rng: &mut SeedRng) -> (Vec<f64>, Vec<f64>) {
        let mu = self.morph.row(c);
        let morph: Vec<f64> = mu.iter().map(|&m| m + self.noise * rng.normal()).collect();
        let rotated = self
            .rotation
            .mul_vec(mu)
            .expect("rotation matches prototype width");
        let generic: Vec<f64> = rotated
            .iter()
            .map(|&g| g + self.noise * rng.normal())
            .collect();
        (generic, morph)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gram-Schmidt on a Gaussian matrix: orthonormal columns when rows >= cols,
/// orthonormal rows otherwise.
fn random_orthogonal(rows: usize, cols: usize, rng: &mut SeedRng) -> Result<Matrix> {
    let (long, short) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.normal()).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let m = Matrix::from_rows(&basis)?;
    Ok(if rows >= cols { m.transpose() } else { m })
}

fn normal_clipped(rng: &mut SeedRng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    (mean + sd * rng.normal()).clamp(lo, hi)
}

/// Per-patient latent draws that do not depend on the baseline hazard.
struct Draws {
    record: ClinicalRecord,
    risk: f64,
    /// `-ln U` for the survival-time inversion, strictly positive.
    exp_draw: f64,
    censor_at: Option<f64>,
}

fn draw_patient(config: &CohortConfig, index: usize, rng: &mut SeedRng) -> Result<Draws> {
    let d = &config.demographics;
    let age = normal_clipped(rng, d.age_mean, d.age_sd, d.age_min, d.age_max);
    let bmi_weights: Vec<f64> = d.bmi_components.iter().map(|c| c.0).collect();
    let (_, bmi_mean, bmi_sd) = d.bmi_components[rng.categorical(&bmi_weights)];
    let bmi = normal_clipped(rng, bmi_mean, bmi_sd, 12.0, 70.0);
    // log-normal with the requested arithmetic mean
    let mu = d.income_mean.ln() - 0.5 * d.income_log_sd * d.income_log_sd;
    let income = (mu + d.income_log_sd * rng.normal()).exp();
    let sex = if rng.bernoulli(d.male_fraction) {
        Sex::M
    } else {
        Sex::F
    };
    let treatment = if rng.bernoulli(d.fl_fraction) {
        Treatment::FL
    } else {
        Treatment::IFL
    };
    let grade = rng.categorical(&d.grade_weights) as u8 + 1;
    let location = rng.categorical(&d.location_weights);
    let beta = Beta::new(config.burden_alpha, config.burden_beta)
        .map_err(|e| PrismError::config(format!("burden distribution: {e}")))?;
    let burden: f64 = rng.sample(beta);
    let exp_draw: f64 = rng.sample::<f64, _>(Exp1).max(1e-300);
    let censor_at = if rng.bernoulli(config.censoring_rate) {
        Some(rng.uniform_range(config.censor_window.0, config.censor_window.1))
    } else {
        None
    };
    let risk = config.signal_strength * config.standardized_burden(burden)
        + if age > 65.0 { config.age_effect } else { 0.0 };
    Ok(Draws {
        record: ClinicalRecord {
            patient_id: patient_id(index),
            age,
            bmi,
            income,
            sex,
            treatment,
            grade,
            location,
            time_months: 0.0,
            event: false,
            label5y: None,
            burden,
        },
        risk,
        exp_draw,
        censor_at,
    })
}

/// Weibull CDF at `t` for scale `scale` and linear predictor `risk`.
fn weibull_cdf(t: f64, scale: f64, shape: f64, risk: f64) -> f64 {
    -(-(t / scale).powf(shape) * risk.exp()).exp_m1()
}

/// Expected fraction of five-year deaths among patients with a defined
/// five-year label, for baseline scale `scale`, under the configured
/// censoring mechanism.
pub fn expected_death_fraction(risks: &[f64], scale: f64, config: &CohortConfig) -> f64 {
    let k = config.weibull_shape;
    let rho = config.censoring_rate;
    let (c0, c1) = config.censor_window;
    let width = c1 - c0;
    // Probability that the censoring time exceeds t.
    let surv_c = |t: f64| ((c1 - t) / width).clamp(0.0, 1.0);
    let (mut died, mut labelled) = (0.0, 0.0);
    for &r in risks {
        let f60 = weibull_cdf(FIVE_YEARS, scale, k, r);
        // P(T <= 60, T <= C) = ∫ f S_C = F(60) S_C(60) + (1/width) ∫_{c0}^{60} F(t) dt
        let steps = 96;
        let (lo, hi) = (c0.min(FIVE_YEARS), FIVE_YEARS.min(c1));
        let mut integral = 0.0;
        if hi > lo {
            let h = (hi - lo) / steps as f64;
            for i in 0..=steps {
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                integral += w * weibull_cdf(lo + i as f64 * h, scale, k, r);
            }
            integral *= h / 3.0 / width;
        }
        let p1_cens = f60 * surv_c(FIVE_YEARS) + integral;
        let p0_cens = (1.0 - f60) * surv_c(FIVE_YEARS);
        died += (1.0 - rho) * f60 + rho * p1_cens;
        labelled += (1.0 - rho) + rho * (p1_cens + p0_cens);
    }
    died / labelled
}

fn solve_baseline_scale(risks: &[f64], target: f64, config: &CohortConfig) -> Result<f64> {
    let (mut lo, mut hi) = (1e-3f64.ln(), 1e9f64.ln());
    let frac = |log_scale: f64| expected_death_fraction(risks, log_scale.exp(), config);
    if !(frac(lo) >= target && frac(hi) <= target) {
        return Err(PrismError::config(format!(
            "target death fraction {target} unreachable with this censoring setup"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Clinical table with planted burden-driven Weibull survival.
pub fn generate_clinical(config: &CohortConfig) -> Result<Vec<ClinicalRecord>> {
    config.validate()?;
    let root = SeedRng::new(config.seed).split("clinical");
    let draws: Vec<Draws> = (0..config.n_patients)
        .map(|i| draw_patient(config, i, &mut root.split(&patient_id(i))))
        .collect::<Result<_>>()?;
    let risks: Vec<f64> = draws.iter().map(|d| d.risk).collect();
    let scale = match config.target_death_fraction {
        Some(t) => solve_baseline_scale(&risks, t, config)?,
        None => config.baseline_scale,
    };
    let k = config.weibull_shape;
    Ok(draws
        .into_iter()
        .map(|d| {
            // S(t) = exp(-(t/scale)^k e^risk)
            let t = (scale * (d.exp_draw * (-d.risk).exp()).powf(1.0 / k)).max(1e-3);
            let (time, event) = match d.censor_at {
                Some(c) if c < t => (c, false),
                _ => (t, true),
            };
            let mut rec = d.record;
            rec.time_months = time;
            rec.event = event;
            rec.label5y = ClinicalRecord::derive_label(time, event);
            rec
        })
        .collect())
}

/// Patch bag whose risk-class share equals the patient's burden up to
/// rounding to whole patches.
pub fn generate_bag(
    record: &ClinicalRecord,
    config: &CohortConfig,
    prototypes: &Prototypes,
    rng: &mut SeedRng,
) -> Result<PatchFeatureBag> {
    if !(0.0..=1.0).contains(&record.burden) {
        return Err(PrismError::data(format!(
            "patient {} has burden {} outside [0, 1]",
            record.patient_id, record.burden
        )));
    }
    let n = rng.int_inclusive(config.patches_min, config.patches_max);
    let n_risk = (record.burden * n as f64).round() as usize;
    let hga_share = rng.uniform();
    let other: Vec<usize> = (0..N_CLASSES).filter(|&c| !is_risk_class(c)).collect();
    // Dirichlet(1, ..., 1) mixture over the non-risk classes
    let mix: Vec<f64> = other.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();

    let mut classes: Vec<usize> = (0..n)
        .map(|j| {
            if j < n_risk {
                if rng.uniform() < hga_share {
                    RISK_CLASSES[0]
                } else {
                    RISK_CLASSES[1]
                }
            } else {
                other[rng.categorical(&mix)]
            }
        })
        .collect();
    rng.shuffle(&mut classes);

    let mut generic = Vec::with_capacity(n * config.d_g);
    let mut morph = Vec::with_capacity(n * config.d_m);
    for &c in &classes {
        let (g, m) = prototypes.sample_patch(c, rng);
        generic.extend(g);
        morph.extend(m);
    }
    PatchFeatureBag::new(
        record.patient_id.clone(),
        Matrix::new(n, config.d_g, generic)?,
        Matrix::new(n, config.d_m, morph)?,
        classes,
    )
}

pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    let records = generate_clinical(config)?;
    let prototypes = Prototypes::from_config(config)?;
    let root = SeedRng::new(config.seed).split("bags");
    let bags = records
        .iter()
        .map(|r| generate_bag(r, config, &prototypes, &mut root.split(&r.patient_id)))
        .collect::<Result<_>>()?;
    Ok(Cohort {
        config: config.clone(),
        records,
        bags,
    })
}

/// Labelled patches for training the tissue classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    /// `n × d_m`
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// `per_class` morph-channel patches for every class, drawn from the
/// cohort's prototypes.
pub fn generate_patch_dataset(
    prototypes: &Prototypes,
    per_class: usize,
    rng: &mut SeedRng,
) -> Result<PatchDataset> {
    let d = prototypes.d_m();
    let mut data = Vec::with_capacity(N_CLASSES * per_class * d);
    let mut labels = Vec::with_capacity(N_CLASSES * per_class);
    for c in 0..N_CLASSES {
        for _ in 0..per_class {
            let (_, m) = prototypes.sample_patch(c, rng);
            data.extend(m);
            labels.push(c);
        }
    }
    Ok(PatchDataset {
        features: Matrix::new(labels.len(), d, data)?,
        labels,
    })
}
