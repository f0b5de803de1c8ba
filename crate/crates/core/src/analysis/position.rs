use std::collections::BTreeMap;

use serde::Serialize;

use super::{resolve_outcomes, unit_of, AnalysisError, AnalysisOptions, Metric, PromptId, Resolved};
use crate::corpus::LanguageId;
use crate::runner::{Ledger, PromptRef};

pub const NORMALIZED_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionAxis {
    /// Token index, up to the 99th-percentile prompt length.
    Absolute,
    /// `token_index / token_count` in 20 equal bins.
    Normalized20Bins,
}

impl PositionAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionAxis::Absolute => "absolute",
            PositionAxis::Normalized20Bins => "normalized_20_bins",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PositionBin {
    pub index: usize,
    pub n_original_pass: usize,
    /// Flips among mutations whose original passed.
    pub n_hurt: usize,
    pub n_original_fail: usize,
    pub n_help: usize,
}

impl PositionBin {
    pub fn frac_hurt(&self) -> Option<f64> {
        (self.n_original_pass > 0).then(|| self.n_hurt as f64 / self.n_original_pass as f64)
    }

    pub fn frac_help(&self) -> Option<f64> {
        (self.n_original_fail > 0).then(|| self.n_help as f64 / self.n_original_fail as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PositionProfile {
    pub model_id: String,
    pub metric: Metric,
    pub axis: PositionAxis,
    /// Absolute axis only: positions at or past this index are not binned.
    pub cap: Option<usize>,
    pub n_beyond_cap: usize,
    pub bins: Vec<PositionBin>,
}

/// Nearest-rank percentile of a non-empty sorted slice.
fn nearest_rank(sorted: &[usize], pct: f64) -> usize {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub(crate) fn normalized_bin(token_index: usize, token_count: usize) -> usize {
    (token_index * NORMALIZED_BINS / token_count.max(1)).min(NORMALIZED_BINS - 1)
}

struct MutantView<'a> {
    task_id: &'a str,
    token_index: usize,
    token_count: usize,
    original: &'a Resolved,
    mutant: &'a Resolved,
}

/// Joins every resolved mutant of `model` with its original and its
/// mutation record.
fn mutants<'a>(
    ledger: &'a Ledger,
    resolved: &'a BTreeMap<PromptId, Resolved>,
    model: &str,
) -> Result<Vec<MutantView<'a>>, AnalysisError> {
    let mut out = Vec::new();
    for ((m, task, pref), mutant) in resolved.range((model.to_string(), String::new(), PromptRef::Original)..) {
        if m != model {
            break;
        }
        let PromptRef::Mutation(key) = pref else { continue };
        let original = resolved
            .get(&(m.clone(), task.clone(), PromptRef::Original))
            .ok_or_else(|| AnalysisError::MissingOriginal {
                model_id: m.clone(),
                task_id: task.clone(),
            })?;
        let rec = ledger
            .mutation(m, task, key)
            .ok_or_else(|| AnalysisError::MissingMutation {
                model_id: m.clone(),
                task_id: task.clone(),
                key: key.to_string(),
            })?;
        out.push(MutantView {
            task_id: task,
            token_index: key.token_index,
            token_count: rec.token_count,
            original,
            mutant,
        });
    }
    Ok(out)
}

fn models(resolved: &BTreeMap<PromptId, Resolved>) -> Vec<String> {
    let mut v: Vec<String> = resolved.keys().map(|(m, _, _)| m.clone()).collect();
    v.dedup();
    v
}

/// Per model and metric, hurt/help fractions by position on both axes.
pub fn position_profiles(ledger: &Ledger, opts: &AnalysisOptions) -> Result<Vec<PositionProfile>, AnalysisError> {
    let resolved = resolve_outcomes(&ledger.outcomes, opts);
    let mut out = Vec::new();
    for model in models(&resolved) {
        let views = mutants(ledger, &resolved, &model)?;
        let mut lengths: BTreeMap<&str, usize> = BTreeMap::new();
        for v in &views {
            lengths.insert(v.task_id, v.token_count);
        }
        let mut sorted: Vec<usize> = lengths.values().copied().collect();
        sorted.sort_unstable();
        let cap = if sorted.is_empty() { 0 } else { nearest_rank(&sorted, 99.0) };

        for metric in Metric::ALL {
            for axis in [PositionAxis::Absolute, PositionAxis::Normalized20Bins] {
                let n_bins = match axis {
                    PositionAxis::Absolute => cap,
                    PositionAxis::Normalized20Bins => NORMALIZED_BINS,
                };
                let mut bins: Vec<PositionBin> = (0..n_bins)
                    .map(|index| PositionBin {
                        index,
                        ..PositionBin::default()
                    })
                    .collect();
                let mut beyond = 0;
                for v in &views {
                    let idx = match axis {
                        PositionAxis::Absolute => v.token_index,
                        PositionAxis::Normalized20Bins => normalized_bin(v.token_index, v.token_count),
                    };
                    let Some(bin) = bins.get_mut(idx) else {
                        beyond += 1;
                        continue;
                    };
                    let before = metric.label(v.original.functional, v.original.secure);
                    let after = metric.label(v.mutant.functional, v.mutant.secure);
                    if before {
                        bin.n_original_pass += 1;
                        bin.n_hurt += (!after) as usize;
                    } else {
                        bin.n_original_fail += 1;
                        bin.n_help += after as usize;
                    }
                }
                out.push(PositionProfile {
                    model_id: model.clone(),
                    metric,
                    axis,
                    cap: (axis == PositionAxis::Absolute).then_some(cap),
                    n_beyond_cap: beyond,
                    bins,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeatCell {
    pub model_id: String,
    pub language: LanguageId,
    /// CWE, or task id under per-task granularity.
    pub unit: String,
    pub position: usize,
    pub n_mutations: usize,
    pub n_flips: usize,
}

impl HeatCell {
    /// Absent (not zero) when the position had no mutations.
    pub fn fraction(&self) -> Option<f64> {
        (self.n_mutations > 0).then(|| self.n_flips as f64 / self.n_mutations as f64)
    }
}

/// Flip fraction per (model, language, unit, position), covering every
/// position of the longest prompt in the unit.
pub fn position_heatmap(
    ledger: &Ledger,
    metric: Metric,
    opts: &AnalysisOptions,
) -> Result<Vec<HeatCell>, AnalysisError> {
    let resolved = resolve_outcomes(&ledger.outcomes, opts);
    let mut acc: BTreeMap<(String, LanguageId, String), (usize, BTreeMap<usize, (usize, usize)>)> = BTreeMap::new();
    for model in models(&resolved) {
        for v in mutants(ledger, &resolved, &model)? {
            let unit = unit_of(opts.granularity, v.task_id, &v.original.cwe);
            let (len, cells) = acc.entry((model.clone(), v.original.language, unit)).or_default();
            *len = (*len).max(v.token_count);
            let c = cells.entry(v.token_index).or_default();
            c.0 += 1;
            let before = metric.label(v.original.functional, v.original.secure);
            let after = metric.label(v.mutant.functional, v.mutant.secure);
            c.1 += (before != after) as usize;
        }
    }
    let mut out = Vec::new();
    for ((model_id, language, unit), (len, cells)) in acc {
        for position in 0..len {
            let (n_mutations, n_flips) = cells.get(&position).copied().unwrap_or((0, 0));
            out.push(HeatCell {
                model_id: model_id.clone(),
                language,
                unit: unit.clone(),
                position,
                n_mutations,
                n_flips,
            });
        }
    }
    Ok(out)
}
