//! Survival and classification statistics.

mod classify;
mod concordance;
mod cox;
mod km;
mod wilcoxon;

pub use classify::{
    average_ranks, confusion_metrics, roc_auc, roc_curve, select_threshold, BinaryMetrics,
};
pub use concordance::{concordance_counts, concordance_index, ConcordanceCounts};
pub use cox::{
    cox_fit, dichotomized_cox, median, partial_log_likelihood, CoxFit, DichotomizedCox, RiskCut,
    Ties,
};
pub use km::{kaplan_meier, SurvivalCurve};
pub use wilcoxon::{
    wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N, MIN_NONZERO,
};
