//! Morphology-aware multiple-instance survival modelling.
//!
//! The crate covers the whole desk-scale pipeline: synthetic patient cohorts
//! with a planted morphology-driven survival signal ([`cohort`]), a tissue
//! class MLP whose hidden layer supplies morphology features ([`morph`]),
//! bilinear fusion of generic and morphology channels ([`fusion`]), gated
//! attention pooling with a slide-level head ([`mil`]), survival and
//! classification statistics ([`surv`]) and subgroup-stratified
//! cross-validation ([`stratcv`]).

pub mod cohort;
pub mod digest;
pub mod error;
pub mod fusion;
pub mod mil;
pub mod morph;
pub mod numcore;
pub mod rng;
pub mod stratcv;
pub mod surv;

pub use error::{PrismError, Result};
pub use rng::SeedRng;
