//! Exact and resampling statistics used by the analysis and probe layers.
//!
//! Everything here is pure and reentrant. Randomized routines take an
//! explicit seed and derive their draws from `(seed, resample_index)`.

mod auc;
mod bootstrap;
mod fdr;
mod fisher;
mod mann_whitney;

pub use auc::roc_auc;
pub use bootstrap::{percentile_bootstrap_ci, quantile_linear, resample_rng, BootstrapCi};
pub use fdr::{benjamini_hochberg, BhOutcome};
pub use fisher::{fisher_exact_two_sided, ContingencyTable2x2, FISHER_RELATIVE_SLACK};
pub use mann_whitney::{
    mann_whitney_u_greater, mann_whitney_u_greater_with, MwuMethod, EXACT_MAX_SAMPLE,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("contingency table has zero total")]
    EmptyTable,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: StatMethod,
    /// Set when the input had a zero row or column total and the p-value
    /// was fixed to 1 by convention.
    #[serde(default)]
    pub degenerate: bool,
}
