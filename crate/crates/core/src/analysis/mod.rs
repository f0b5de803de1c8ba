//! Tables and figures recomputed from the ledger: baseline pass rates,
//! flip counts, affected-CWE fractions, effect sizes, position profiles,
//! per-position heatmaps and the sampled-temperature significance protocol.

mod flips;
mod position;
mod significance;

pub use flips::{
    affected_cwe_fraction, baseline_pass_rates, effect_sizes, flip_table, AffectedFraction,
    BaselineRate, EffectSize, FlipSummary,
};
pub use position::{
    position_heatmap, position_profiles, HeatCell, PositionAxis, PositionBin, PositionProfile,
    NORMALIZED_BINS,
};
pub use significance::{significance_at_temperature, SignificanceRow};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageId;
use crate::runner::{OutcomeRecord, PromptRef};
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("ledger has no original-prompt outcomes at T={0}")]
    NoOriginals(f64),
    #[error("{model_id} {task_id}: mutant outcome without a matching original")]
    MissingOriginal { model_id: String, task_id: String },
    #[error("{model_id} {task_id} {key}: no mutation record")]
    MissingMutation {
        model_id: String,
        task_id: String,
        key: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Func,
    FuncSec,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Func, Metric::FuncSec];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Func => "func",
            Metric::FuncSec => "func_sec",
        }
    }

    pub fn label(self, functional: bool, secure: bool) -> bool {
        match self {
            Metric::Func => functional,
            Metric::FuncSec => functional && secure,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which count an affected-fraction panel thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    Func,
    FuncSec,
    /// Functional on both sides, secure bit changed.
    SecurityDriven,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Func, Panel::FuncSec, Panel::SecurityDriven];

    pub fn as_str(self) -> &'static str {
        match self {
            Panel::Func => "func",
            Panel::FuncSec => "func_sec",
            Panel::SecurityDriven => "security_driven",
        }
    }
}

/// Unit flips are aggregated over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerCwe,
    PerTask,
}

/// How several T=0 samples of one prompt collapse into one outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyPolicy {
    #[default]
    FirstSample,
    /// Most frequent (functional, secure) pair; ties go to the lowest
    /// sample index among the tied pairs.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub temperature: f64,
    pub granularity: Granularity,
    pub anomaly_policy: AnomalyPolicy,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            granularity: Granularity::PerCwe,
            anomaly_policy: AnomalyPolicy::FirstSample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model_id: String,
    pub language: LanguageId,
    /// CWE id, or the task id under per-task granularity.
    pub cwe: String,
}

/// One prompt's outcome after collapsing its samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub language: LanguageId,
    pub cwe: String,
    pub functional: bool,
    pub secure: bool,
    pub n_samples: usize,
    /// Samples disagreed on (functional, secure).
    pub unstable: bool,
}

pub type PromptId = (String, String, PromptRef);

/// Collapses the outcomes at `opts.temperature` to one per
/// (model, task, prompt), ordered by key.
pub fn resolve_outcomes(outcomes: &[OutcomeRecord], opts: &AnalysisOptions) -> BTreeMap<PromptId, Resolved> {
    let mut groups: BTreeMap<PromptId, Vec<&OutcomeRecord>> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.temperature == opts.temperature) {
        groups
            .entry((o.model_id.clone(), o.task_id.clone(), o.prompt_ref))
            .or_default()
            .push(o);
    }
    groups
        .into_iter()
        .map(|(k, mut recs)| {
            recs.sort_by_key(|r| r.sample_index);
            let first = (recs[0].functional, recs[0].secure);
            let unstable = recs.iter().any(|r| (r.functional, r.secure) != first);
            let (functional, secure) = match opts.anomaly_policy {
                AnomalyPolicy::FirstSample => first,
                AnomalyPolicy::Majority => majority(&recs),
            };
            let r = Resolved {
                language: recs[0].language,
                cwe: recs[0].cwe.clone(),
                functional,
                secure,
                n_samples: recs.len(),
                unstable,
            };
            (k, r)
        })
        .collect()
}

fn majority(recs: &[&OutcomeRecord]) -> (bool, bool) {
    // recs sorted by sample index; first occurrence wins ties
    let mut counts: Vec<((bool, bool), usize)> = Vec::new();
    for r in recs {
        let pair = (r.functional, r.secure);
        match counts.iter_mut().find(|(p, _)| *p == pair) {
            Some((_, c)) => *c += 1,
            None => counts.push((pair, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    counts.iter().find(|(_, c)| *c == best).map(|(p, _)| *p).unwrap_or((false, false))
}

pub(crate) fn unit_of(granularity: Granularity, task_id: &str, cwe: &str) -> String {
    match granularity {
        Granularity::PerCwe => cwe.to_string(),
        Granularity::PerTask => task_id.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// (model, task) cells whose original prompt has more than one sample.
    pub original_cells: usize,
    pub original_anomalies: usize,
    pub prompt_cells: usize,
    pub prompt_anomalies: usize,
}

/// Counts prompts whose repeated samples at `opts.temperature` disagree on
/// the oracle outcome.
pub fn stability_anomalies(outcomes: &[OutcomeRecord], opts: &AnalysisOptions) -> StabilityReport {
    let mut rep = StabilityReport::default();
    for ((_, _, pref), r) in resolve_outcomes(outcomes, opts) {
        if r.n_samples < 2 {
            continue;
        }
        rep.prompt_cells += 1;
        rep.prompt_anomalies += r.unstable as usize;
        if pref == PromptRef::Original {
            rep.original_cells += 1;
            rep.original_anomalies += r.unstable as usize;
        }
    }
    rep
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn first_sample_and_majority() {
        let o = |s, f, sec| outcome("m", "t", LanguageId::C, "CWE-1", 0.0, PromptRef::Original, s, f, sec);
        let recs = vec![o(2, true, true), o(0, false, true), o(1, true, true)];
        let first = resolve_outcomes(&recs, &AnalysisOptions::default());
        let r = first.values().next().unwrap();
        assert!(!r.functional && r.unstable && r.n_samples == 3);
        let maj = resolve_outcomes(
            &recs,
            &AnalysisOptions {
                anomaly_policy: AnomalyPolicy::Majority,
                ..AnalysisOptions::default()
            },
        );
        assert!(maj.values().next().unwrap().functional);
    }

    #[test]
    fn majority_tie_goes_to_earliest_sample() {
        let o = |s, f| outcome("m", "t", LanguageId::C, "CWE-1", 0.0, PromptRef::Original, s, f, true);
        let recs = vec![o(1, true), o(0, false)];
        let refs: Vec<&OutcomeRecord> = {
            let mut v: Vec<_> = recs.iter().collect();
            v.sort_by_key(|r| r.sample_index);
            v
        };
        assert_eq!(majority(&refs), (false, true));
    }

    #[test]
    fn anomaly_counts() {
        let o = |task: &str, pref, s, f| outcome("m", task, LanguageId::C, "CWE-1", 0.0, pref, s, f, true);
        let m = PromptRef::Mutation(key(crate::mutator::MutationKind::SingleChar, 0, 0));
        let recs = vec![
            o("a", PromptRef::Original, 0, true),
            o("a", PromptRef::Original, 1, true),
            o("a", PromptRef::Original, 2, false),
            o("b", PromptRef::Original, 0, true),
            o("b", PromptRef::Original, 1, true),
            o("b", m, 0, true),
            o("b", m, 1, false),
        ];
        let rep = stability_anomalies(&recs, &AnalysisOptions::default());
        assert_eq!(
            rep,
            StabilityReport {
                original_cells: 2,
                original_anomalies: 1,
                prompt_cells: 3,
                prompt_anomalies: 2
            }
        );
    }

    #[test]
    fn other_temperatures_ignored() {
        let recs = vec![
            outcome("m", "t", LanguageId::C, "CWE-1", 0.8, PromptRef::Original, 0, true, true),
            outcome("m", "t", LanguageId::C, "CWE-1", 0.0, PromptRef::Original, 0, false, true),
        ];
        let r = resolve_outcomes(&recs, &AnalysisOptions::default());
        assert_eq!(r.len(), 1);
        assert!(!r.values().next().unwrap().functional);
    }
}
