//! Per-cell probes on prompt-end hidden states: cell assembly, stratified
//! splits, logistic and MLP probes, the two-phase configuration search,
//! held-out evaluation and the CWE-group report.

mod activations;
mod data;
mod group;
mod logistic;
mod mlp;
mod search;
mod synth;

pub use activations::{activation_file_name, layer_grid, relative_depth, ActivationStore};
pub use data::{assemble_cells, split_dev_test, stratified_folds, DevTestSplit, ProbeCell, Standardizer};
pub use group::{group_report, per_cwe_means, Group, GroupReport, GroupStat, Grouping};
pub use logistic::{fit_logistic, objective_and_grad, LogisticFit, LogisticProbe};
pub use mlp::{MlpProbe, MlpTraining};
pub use search::{
    cross_validate, layer_profile, phase1_search, phase2_refine, plan_cells, run_probe_pipeline, train_probe,
    CellPlan, CellResult, DroppedCell, LayerPoint, ModelSearch, PipelineOutput, ProbeSettings, RankedConfig,
    TestAudit, TrainedProbe,
};
pub use synth::{synthesize_activations, SynthSpec};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::container::ContainerError;
use crate::corpus::LanguageId;
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("no activations for prompt `{0}`")]
    MissingActivation(String),
    #[error("activation store {path}: {reason}")]
    InconsistentActivations { path: PathBuf, reason: String },
    #[error("cell {0}: a class has fewer than 2 members")]
    DegenerateStratification(String),
    #[error("no admitted cells for model `{0}`")]
    InsufficientCells(String),
    #[error("test split of cell {0} already consumed")]
    TestSplitReused(String),
    #[error("invalid probe parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Functional,
    FunctionalAndSecure,
}

impl ProbeTarget {
    pub const ALL: [ProbeTarget; 2] = [ProbeTarget::Functional, ProbeTarget::FunctionalAndSecure];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTarget::Functional => "functional",
            ProbeTarget::FunctionalAndSecure => "functional_and_secure",
        }
    }

    pub fn label(self, functional: bool, secure: bool) -> bool {
        match self {
            ProbeTarget::Functional => functional,
            ProbeTarget::FunctionalAndSecure => functional && secure,
        }
    }
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProbeCellKey {
    pub model_id: String,
    pub language: LanguageId,
    pub cwe: String,
    pub target: ProbeTarget,
}

impl fmt::Display for ProbeCellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.model_id, self.language, self.cwe, self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProbeConfig {
    LogisticL2 {
        layer: usize,
        c: f64,
    },
    Mlp2Layer {
        layer: usize,
        hidden: (usize, usize),
        dropout: f64,
        weight_decay: f64,
    },
}

impl ProbeConfig {
    pub fn layer(&self) -> usize {
        match *self {
            ProbeConfig::LogisticL2 { layer, .. } | ProbeConfig::Mlp2Layer { layer, .. } => layer,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ProbeConfig::LogisticL2 { .. } => "logistic_l2",
            ProbeConfig::Mlp2Layer { .. } => "mlp_2layer",
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        match *self {
            ProbeConfig::LogisticL2 { c, .. } if !(c > 0.0 && c.is_finite()) => {
                Err(ProbeError::InvalidParameter(format!("C must be positive, got {c}")))
            }
            ProbeConfig::Mlp2Layer { hidden, dropout, weight_decay, .. }
                if hidden.0 == 0 || hidden.1 == 0 || !(0.0..1.0).contains(&dropout) || !(weight_decay >= 0.0) =>
            {
                Err(ProbeError::InvalidParameter(format!("bad mlp config {self}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ProbeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ProbeConfig::LogisticL2 { layer, c } => write!(f, "logreg layer={layer} C={c}"),
            ProbeConfig::Mlp2Layer {
                layer,
                hidden,
                dropout,
                weight_decay,
            } => write!(
                f,
                "mlp2 layer={layer} h={},{} d={dropout} wd={weight_decay}",
                hidden.0, hidden.1
            ),
        }
    }
}

/// A trained probe; higher scores mean the positive label is more likely.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> f64;
}
