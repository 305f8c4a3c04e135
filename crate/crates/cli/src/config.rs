use std::fs;
use std::path::Path;

use prism_core::cohort::CohortConfig;
use prism_core::fusion::FusionMode;
use prism_core::mil::{ModelDims, Selection, TrainHyper};
use prism_core::morph::MorphTrainConfig;
use prism_core::rng::derive_seed;
use prism_core::stratcv::CvMode;
use prism_core::{PrismError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub rank: usize,
    pub d: usize,
    pub l: usize,
    pub fusion_mode: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            d: 16,
            l: 8,
            fusion_mode: FusionMode::Factorized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub l1: f64,
    pub epochs: usize,
    pub folds: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            lr: h.lr,
            l1: h.l1,
            epochs: h.epochs,
            folds: 5,
            selection: h.selection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Use `threshold` as given.
    #[default]
    Fixed,
    /// Youden-optimal threshold on each fold's validation predictions.
    Validation,
}

/// Everything a run depends on. The cohort seed is derived from `seed`, so
/// `cohort.seed` in a config file is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub cohort: CohortConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub morph: MorphTrainConfig,
    pub morph_patches_per_class: usize,
    pub cv_mode: CvMode,
    pub kmeans_clusters: usize,
    pub subgroup_columns: Vec<String>,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cohort: CohortConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            morph: MorphTrainConfig::default(),
            morph_patches_per_class: 200,
            cv_mode: CvMode::Stratified,
            kmeans_clusters: 6,
            subgroup_columns: ["sex", "treatment", "grade", "location"]
                .map(String::from)
                .to_vec(),
            threshold: 0.5,
            threshold_mode: ThresholdMode::Fixed,
        }
    }
}

const SUBGROUP_COLUMNS: [&str; 5] = ["sex", "treatment", "grade", "location", "age_band"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| PrismError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PrismError::config(format!("{}: {e}", path.display())))
    }

    /// Fill derived fields and check ranges.
    pub fn finalize(mut self) -> Result<Self> {
        self.cohort.seed = derive_seed(self.seed, "cohort");
        self.cohort.validate()?;
        if self.train.folds < 2 {
            return Err(PrismError::config("train.folds must be at least 2"));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) || !(self.train.l1 >= 0.0) {
            return Err(PrismError::config(
                "train.lr must be positive and train.l1 non-negative",
            ));
        }
        if self.model.rank == 0 || self.model.d == 0 || self.model.l == 0 {
            return Err(PrismError::config("model dimensions must be positive"));
        }
        if self.morph_patches_per_class < 10 {
            return Err(PrismError::config(
                "morph_patches_per_class must be at least 10",
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PrismError::config("threshold must lie in [0, 1]"));
        }
        for c in &self.subgroup_columns {
            if !SUBGROUP_COLUMNS.contains(&c.as_str()) {
                return Err(PrismError::config(format!(
                    "unknown subgroup column '{c}' (expected one of {})",
                    SUBGROUP_COLUMNS.join(", ")
                )));
            }
        }
        Ok(self)
    }

    pub fn folds_seed(&self) -> u64 {
        derive_seed(self.seed, "folds")
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.train.lr,
            l1: self.train.l1,
            epochs: self.train.epochs,
            seed: self.seed,
            selection: self.train.selection,
        }
    }

    pub fn dims(&self, d_g: usize, d_m: usize) -> ModelDims {
        ModelDims {
            d_g,
            d_m,
            rank: self.model.rank,
            d: self.model.d,
            l: self.model.l,
            mode: self.model.fusion_mode,
        }
    }
}
