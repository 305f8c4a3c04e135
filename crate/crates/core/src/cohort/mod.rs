//! Synthetic patient cohorts with a planted, recoverable survival signal.
//!
//! Each patient carries a latent *burden*: the fraction of their patches that
//! show high-grade adenocarcinoma or necrosis. Burden raises the hazard of a
//! Weibull proportional-hazards survival time, so a model that recovers the
//! burden from the bag can predict five-year death.

mod config;
mod generate;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{CohortConfig, Demographics};
pub use generate::{
    expected_death_fraction, generate_bag, generate_clinical, generate_cohort,
    generate_patch_dataset, PatchDataset, Prototypes,
};
pub use io::{
    clinical_csv, cohort_load, cohort_save, decode_bag, encode_bag, parse_clinical_csv,
    read_manifest, CohortManifest, FileHash, CLINICAL_HEADER,
};

use crate::error::{PrismError, Result};
use crate::numcore::Matrix;

/// Tissue classes, in label order.
pub const CLASS_NAMES: [&str; 13] = [
    "high_grade_adenocarcinoma",
    "low_grade_adenocarcinoma",
    "high_grade_adenoma",
    "low_grade_adenoma",
    "fat",
    "hyperplastic_polyp",
    "inflammation",
    "mucin",
    "smooth_muscle",
    "necrosis",
    "sessile_serrated_lesion",
    "stroma",
    "vascular_structures",
];
pub const N_CLASSES: usize = CLASS_NAMES.len();
/// Classes whose share of a bag is the planted burden.
pub const RISK_CLASSES: [usize; 2] = [0, 9];

pub const LOCATIONS: [&str; 7] = [
    "cecum",
    "ascending_colon",
    "hepatic_flexure",
    "transverse_colon",
    "splenic_flexure",
    "descending_colon",
    "sigmoid_colon",
];

/// Five-year horizon in months.
pub const FIVE_YEARS: f64 = 60.0;

pub fn is_risk_class(c: usize) -> bool {
    RISK_CLASSES.contains(&c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Treatment {
    FL,
    IFL,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Treatment::FL => "FL",
            Treatment::IFL => "IFL",
        })
    }
}

/// One patient's clinical row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub age: f64,
    pub bmi: f64,
    pub income: f64,
    pub sex: Sex,
    pub treatment: Treatment,
    /// 1, 2 or 3.
    pub grade: u8,
    /// Index into [`LOCATIONS`].
    pub location: usize,
    pub time_months: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
    /// `Some(true)` died within five years, `Some(false)` survived five
    /// years, `None` when censored before the horizon.
    pub label5y: Option<bool>,
    /// Planted risk-morphology burden in `[0, 1]`. Not part of the clinical
    /// table; persisted separately.
    pub burden: f64,
}

impl ClinicalRecord {
    /// Five-year label implied by time and event status.
    pub fn derive_label(time_months: f64, event: bool) -> Option<bool> {
        if event && time_months <= FIVE_YEARS {
            Some(true)
        } else if time_months > FIVE_YEARS {
            Some(false)
        } else {
            None
        }
    }

    /// Value of a categorical clinical column for subgroup reporting.
    pub fn attribute(&self, column: &str) -> Option<String> {
        Some(match column {
            "sex" => self.sex.to_string(),
            "treatment" => self.treatment.to_string(),
            "grade" => self.grade.to_string(),
            "location" => LOCATIONS[self.location].to_string(),
            "age_band" => if self.age <= 65.0 { "<=65" } else { ">65" }.to_string(),
            _ => return None,
        })
    }
}

/// A patient's bag of patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureBag {
    pub patient_id: String,
    /// `n × d_g`
    pub generic: Matrix,
    /// `n × d_m`
    pub morph: Matrix,
    pub patch_class: Vec<usize>,
}

impl PatchFeatureBag {
    pub fn new(
        patient_id: String,
        generic: Matrix,
        morph: Matrix,
        patch_class: Vec<usize>,
    ) -> Result<Self> {
        let bag = Self {
            patient_id,
            generic,
            morph,
            patch_class,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.patch_class.len();
        if n == 0 {
            return Err(PrismError::data(format!(
                "bag {} is empty",
                self.patient_id
            )));
        }
        if self.generic.rows() != n || self.morph.rows() != n {
            return Err(PrismError::dim(format!(
                "bag {}: {} classes, {} generic rows, {} morph rows",
                self.patient_id,
                n,
                self.generic.rows(),
                self.morph.rows()
            )));
        }
        if let Some(c) = self.patch_class.iter().find(|&&c| c >= N_CLASSES) {
            return Err(PrismError::data(format!(
                "bag {}: class {c} out of range",
                self.patient_id
            )));
        }
        if !self.generic.is_finite() || !self.morph.is_finite() {
            return Err(PrismError::numeric(format!(
                "bag {} has non-finite features",
                self.patient_id
            )));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.patch_class.len()
    }

    /// Fraction of patches in the risk classes.
    pub fn risk_fraction(&self) -> f64 {
        self.patch_class
            .iter()
            .filter(|&&c| is_risk_class(c))
            .count() as f64
            / self.n_patches() as f64
    }

    /// Same bag with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            patient_id: self.patient_id.clone(),
            generic: self.generic.select_rows(perm),
            morph: self.morph.select_rows(perm),
            patch_class: perm.iter().map(|&i| self.patch_class[i]).collect(),
        }
    }

    /// Same bag with the morphology channel replaced.
    pub fn with_morph(&self, morph: Matrix) -> Result<Self> {
        Self::new(
            self.patient_id.clone(),
            self.generic.clone(),
            morph,
            self.patch_class.clone(),
        )
    }
}

/// Clinical table plus one bag per patient, in matching order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub records: Vec<ClinicalRecord>,
    pub bags: Vec<PatchFeatureBag>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{:04}", index + 1)
}
