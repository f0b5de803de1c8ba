use std::collections::BTreeMap;

use serde::Serialize;

use super::{AnalysisError, Metric};
use crate::corpus::LanguageId;
use crate::runner::{OutcomeRecord, PromptRef};
use crate::stats::{benjamini_hochberg, fisher_exact_two_sided, ContingencyTable2x2};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub model_id: String,
    pub language: LanguageId,
    pub task_id: String,
    pub cwe: String,
    pub prompt_ref: PromptRef,
    pub metric: Metric,
    pub mutant_pass: u64,
    pub mutant_n: u64,
    pub baseline_pass: u64,
    pub baseline_n: u64,
    pub p_value: f64,
    pub q_value: f64,
    pub significant: bool,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    n: u64,
    func: u64,
    func_sec: u64,
}

impl Counts {
    fn pass(&self, m: Metric) -> u64 {
        match m {
            Metric::Func => self.func,
            Metric::FuncSec => self.func_sec,
        }
    }
}

/// Fisher two-sided test of each mutant's sample counts against its task's
/// pooled original samples, BH-adjusted within (model, language, metric).
/// Samples are counted, never majority-voted.
pub fn significance_at_temperature(
    outcomes: &[OutcomeRecord],
    temperature: f64,
    alpha: f64,
) -> Result<Vec<SignificanceRow>, AnalysisError> {
    let mut counts: BTreeMap<(String, String, PromptRef), (LanguageId, String, Counts)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.temperature == temperature) {
        let e = counts
            .entry((o.model_id.clone(), o.task_id.clone(), o.prompt_ref))
            .or_insert_with(|| (o.language, o.cwe.clone(), Counts::default()));
        e.2.n += 1;
        e.2.func += o.label_func as u64;
        e.2.func_sec += o.label_func_sec as u64;
    }

    let mut slices: BTreeMap<(String, LanguageId, Metric), Vec<SignificanceRow>> = BTreeMap::new();
    for ((model, task, pref), (language, cwe, c)) in &counts {
        if *pref == PromptRef::Original {
            continue;
        }
        let base = counts
            .get(&(model.clone(), task.clone(), PromptRef::Original))
            .map(|(_, _, b)| *b)
            .ok_or_else(|| AnalysisError::MissingOriginal {
                model_id: model.clone(),
                task_id: task.clone(),
            })?;
        for metric in Metric::ALL {
            let (mp, bp) = (c.pass(metric), base.pass(metric));
            let table = ContingencyTable2x2::new(mp, c.n - mp, bp, base.n - bp);
            let p = fisher_exact_two_sided(table)?.p_value;
            slices
                .entry((model.clone(), *language, metric))
                .or_default()
                .push(SignificanceRow {
                    model_id: model.clone(),
                    language: *language,
                    task_id: task.clone(),
                    cwe: cwe.clone(),
                    prompt_ref: *pref,
                    metric,
                    mutant_pass: mp,
                    mutant_n: c.n,
                    baseline_pass: bp,
                    baseline_n: base.n,
                    p_value: p,
                    q_value: 1.0,
                    significant: false,
                });
        }
    }

    let mut out = Vec::new();
    for (_, mut rows) in slices {
        let ps: Vec<f64> = rows.iter().map(|r| r.p_value).collect();
        let bh = benjamini_hochberg(&ps, alpha)?;
        for (r, q) in rows.iter_mut().zip(bh.q_values) {
            r.q_value = q;
            r.significant = q < alpha;
        }
        out.extend(rows);
    }
    Ok(out)
}
