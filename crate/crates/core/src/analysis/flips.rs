use std::collections::BTreeMap;

use serde::Serialize;

use super::{resolve_outcomes, unit_of, AnalysisError, AnalysisOptions, CellKey, Metric, Panel};
use crate::corpus::LanguageId;
use crate::runner::{Ledger, PromptRef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BaselineRate {
    pub model_id: String,
    pub language: LanguageId,
    pub n_tasks: usize,
    pub n_func: usize,
    pub n_func_sec: usize,
}

impl BaselineRate {
    pub fn func_pct(&self) -> f64 {
        100.0 * self.n_func as f64 / self.n_tasks as f64
    }

    pub fn func_sec_pct(&self) -> f64 {
        100.0 * self.n_func_sec as f64 / self.n_tasks as f64
    }
}

/// Share of tasks whose original prompt passes, per (model, language).
pub fn baseline_pass_rates(ledger: &Ledger, opts: &AnalysisOptions) -> Result<Vec<BaselineRate>, AnalysisError> {
    let mut acc: BTreeMap<(String, LanguageId), BaselineRate> = BTreeMap::new();
    for ((model, _, pref), r) in resolve_outcomes(&ledger.outcomes, opts) {
        if pref != PromptRef::Original {
            continue;
        }
        let e = acc.entry((model.clone(), r.language)).or_insert_with(|| BaselineRate {
            model_id: model,
            language: r.language,
            n_tasks: 0,
            n_func: 0,
            n_func_sec: 0,
        });
        e.n_tasks += 1;
        e.n_func += Metric::Func.label(r.functional, r.secure) as usize;
        e.n_func_sec += Metric::FuncSec.label(r.functional, r.secure) as usize;
    }
    if acc.is_empty() {
        return Err(AnalysisError::NoOriginals(opts.temperature));
    }
    Ok(acc.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlipSummary {
    pub key: CellKey,
    pub metric: Metric,
    pub n_mutations: usize,
    pub n_flips_total: usize,
    /// Original fails the metric, mutant passes.
    pub n_improvements: usize,
    /// Original passes, mutant fails.
    pub n_deteriorations: usize,
    /// Functional on both sides with the secure bit changed.
    pub n_security_driven: usize,
    pub n_mutations_original_pass: usize,
    pub n_mutations_original_fail: usize,
}

impl FlipSummary {
    fn empty(key: CellKey, metric: Metric) -> Self {
        Self {
            key,
            metric,
            n_mutations: 0,
            n_flips_total: 0,
            n_improvements: 0,
            n_deteriorations: 0,
            n_security_driven: 0,
            n_mutations_original_pass: 0,
            n_mutations_original_fail: 0,
        }
    }
}

/// Flip counts per (model, language, unit, metric), ordered by key then
/// metric. Every unit with an original outcome appears, even without
/// mutants.
pub fn flip_table(ledger: &Ledger, opts: &AnalysisOptions) -> Result<Vec<FlipSummary>, AnalysisError> {
    let resolved = resolve_outcomes(&ledger.outcomes, opts);
    let mut acc: BTreeMap<(CellKey, Metric), FlipSummary> = BTreeMap::new();
    let cell = |model: &str, task: &str, r: &super::Resolved| CellKey {
        model_id: model.to_string(),
        language: r.language,
        cwe: unit_of(opts.granularity, task, &r.cwe),
    };

    for ((model, task, pref), r) in &resolved {
        if *pref == PromptRef::Original {
            for m in Metric::ALL {
                let k = cell(model, task, r);
                acc.entry((k.clone(), m)).or_insert_with(|| FlipSummary::empty(k, m));
            }
        }
    }

    for ((model, task, pref), mutant) in &resolved {
        if *pref == PromptRef::Original {
            continue;
        }
        let original = resolved
            .get(&(model.clone(), task.clone(), PromptRef::Original))
            .ok_or_else(|| AnalysisError::MissingOriginal {
                model_id: model.clone(),
                task_id: task.clone(),
            })?;
        let security_driven =
            original.functional && mutant.functional && original.secure != mutant.secure;
        for m in Metric::ALL {
            let before = m.label(original.functional, original.secure);
            let after = m.label(mutant.functional, mutant.secure);
            let s = acc
                .get_mut(&(cell(model, task, original), m))
                .expect("every original seeded a summary");
            s.n_mutations += 1;
            if before {
                s.n_mutations_original_pass += 1;
            } else {
                s.n_mutations_original_fail += 1;
            }
            if before != after {
                s.n_flips_total += 1;
                if before {
                    s.n_deteriorations += 1;
                } else {
                    s.n_improvements += 1;
                }
            }
            s.n_security_driven += security_driven as usize;
        }
    }
    Ok(acc.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectedFraction {
    pub model_id: String,
    pub language: LanguageId,
    pub panel: Panel,
    pub tau: usize,
    pub n_affected: usize,
    pub n_units: usize,
}

impl AffectedFraction {
    pub fn fraction(&self) -> f64 {
        if self.n_units == 0 {
            0.0
        } else {
            self.n_affected as f64 / self.n_units as f64
        }
    }
}

/// Fraction of units per (model, language) whose panel count reaches `tau`.
pub fn affected_cwe_fraction(
    summaries: &[FlipSummary],
    panel: Panel,
    tau: usize,
) -> Result<Vec<AffectedFraction>, AnalysisError> {
    if tau < 1 {
        return Err(AnalysisError::InvalidParameter("tau must be >= 1".into()));
    }
    let metric = match panel {
        Panel::Func => Metric::Func,
        Panel::FuncSec | Panel::SecurityDriven => Metric::FuncSec,
    };
    let mut acc: BTreeMap<(String, LanguageId), AffectedFraction> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.metric == metric) {
        let count = match panel {
            Panel::SecurityDriven => s.n_security_driven,
            _ => s.n_flips_total,
        };
        let e = acc
            .entry((s.key.model_id.clone(), s.key.language))
            .or_insert_with(|| AffectedFraction {
                model_id: s.key.model_id.clone(),
                language: s.key.language,
                panel,
                tau,
                n_affected: 0,
                n_units: 0,
            });
        e.n_units += 1;
        e.n_affected += (count >= tau) as usize;
    }
    Ok(acc.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSize {
    pub model_id: String,
    pub language: LanguageId,
    pub metric: Metric,
    /// Mean over units whose original failed; absent when there are none.
    pub improvement_mean: Option<f64>,
    pub n_improvement_units: usize,
    pub deterioration_mean: Option<f64>,
    pub n_deterioration_units: usize,
}

/// Mean per-unit flip fraction, split by the original's status.
pub fn effect_sizes(summaries: &[FlipSummary], metric: Metric) -> Vec<EffectSize> {
    let mut acc: BTreeMap<(String, LanguageId), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.metric == metric) {
        let (imp, det) = acc.entry((s.key.model_id.clone(), s.key.language)).or_default();
        if s.n_mutations_original_fail > 0 {
            imp.push(s.n_improvements as f64 / s.n_mutations_original_fail as f64);
        }
        if s.n_mutations_original_pass > 0 {
            det.push(s.n_deteriorations as f64 / s.n_mutations_original_pass as f64);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    acc.into_iter()
        .map(|((model_id, language), (imp, det))| EffectSize {
            model_id,
            language,
            metric,
            improvement_mean: mean(&imp),
            n_improvement_units: imp.len(),
            deterioration_mean: mean(&det),
            n_deterioration_units: det.len(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::Granularity;
    use super::*;
    use crate::mutator::MutationKind;
    use crate::runner::OutcomeRecord;

    fn lite<'a>(task: &'a str, cwe: &'a str, positions: Vec<usize>, original: (bool, bool)) -> TaskSpecLite<'a> {
        TaskSpecLite {
            task,
            cwe,
            lang: LanguageId::Py,
            token_count: 40,
            positions,
            original,
        }
    }

    #[test]
    fn all_pass_baseline_is_100() {
        let l = ledger(
            "m",
            &[lite("a", "CWE-1", vec![], (true, true)), lite("b", "CWE-2", vec![], (true, true))],
            |_, _| (true, true),
        );
        let r = baseline_pass_rates(&l, &AnalysisOptions::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].func_pct(), r[0].func_sec_pct()), (100.0, 100.0));
    }

    #[test]
    fn baseline_requires_originals() {
        let l = Ledger::default();
        assert!(matches!(
            baseline_pass_rates(&l, &AnalysisOptions::default()),
            Err(AnalysisError::NoOriginals(_))
        ));
    }

    #[test]
    fn four_of_eighteen_deteriorate() {
        let l = ledger("m", &[lite("a", "CWE-1", vec![3], (true, true))], |_, k| {
            (true, !(k.kind == MutationKind::SingleChar && k.variant_index < 4))
        });
        let t = flip_table(&l, &AnalysisOptions::default()).unwrap();
        let fs = t.iter().find(|s| s.metric == Metric::FuncSec).unwrap();
        assert_eq!(fs.n_mutations, 18);
        assert_eq!(fs.n_deteriorations, 4);
        assert_eq!(fs.n_improvements, 0);
        assert_eq!(fs.n_security_driven, 4);
        let f = t.iter().find(|s| s.metric == Metric::Func).unwrap();
        assert_eq!(f.n_flips_total, 0);
    }

    #[test]
    fn failing_original_flip_is_improvement() {
        let l = ledger("m", &[lite("a", "CWE-1", vec![0], (false, true))], |_, _| (true, true));
        let t = flip_table(&l, &AnalysisOptions::default()).unwrap();
        let f = t.iter().find(|s| s.metric == Metric::Func).unwrap();
        assert_eq!((f.n_improvements, f.n_deteriorations), (18, 0));
        // nonfunctional original: never security-driven
        assert_eq!(f.n_security_driven, 0);
    }

    #[test]
    fn mutant_without_original() {
        let mut l = ledger("m", &[lite("a", "CWE-1", vec![0], (true, true))], |_, _| (true, true));
        l.outcomes.retain(|o| o.prompt_ref != PromptRef::Original);
        assert!(matches!(
            flip_table(&l, &AnalysisOptions::default()),
            Err(AnalysisError::MissingOriginal { .. })
        ));
    }

    /// Independent scan: walk raw outcome records, no grouping helpers.
    fn scan(outcomes: &[OutcomeRecord], cwe: &str, metric: Metric) -> (usize, usize, usize, usize) {
        let orig: std::collections::HashMap<&str, &OutcomeRecord> = outcomes
            .iter()
            .filter(|o| o.prompt_ref == PromptRef::Original)
            .map(|o| (o.task_id.as_str(), o))
            .collect();
        let (mut n, mut imp, mut det, mut sd) = (0, 0, 0, 0);
        for o in outcomes.iter().filter(|o| o.prompt_ref != PromptRef::Original && o.cwe == cwe) {
            let b = orig[o.task_id.as_str()];
            let (x, y) = match metric {
                Metric::Func => (b.label_func, o.label_func),
                Metric::FuncSec => (b.label_func_sec, o.label_func_sec),
            };
            n += 1;
            if x && !y {
                det += 1;
            }
            if !x && y {
                imp += 1;
            }
            if b.functional && o.functional && b.secure != o.secure {
                sd += 1;
            }
        }
        (n, imp, det, sd)
    }

    #[test]
    fn planted_flips_match_scan() {
        let tasks = [
            lite("t1", "CWE-022", vec![0, 1], (true, true)),
            lite("t2", "CWE-078", vec![2, 5], (true, false)),
            lite("t3", "CWE-079", vec![1, 7], (false, false)),
        ];
        let l = ledger("m", &tasks, |task, k| {
            let h = crate::mutator::fnv1a_64(format!("{task}{k}").as_bytes());
            (h % 3 != 0, h % 5 < 2)
        });
        let t = flip_table(&l, &AnalysisOptions::default()).unwrap();
        assert_eq!(t.len(), 6);
        for s in &t {
            let (n, imp, det, sd) = scan(&l.outcomes, &s.key.cwe, s.metric);
            assert_eq!(s.n_mutations, 36);
            assert_eq!((s.n_mutations, s.n_improvements, s.n_deteriorations), (n, imp, det));
            assert_eq!(s.n_security_driven, sd);
            assert_eq!(s.n_improvements + s.n_deteriorations, s.n_flips_total);
        }
    }

    #[test]
    fn record_order_does_not_matter() {
        let tasks = [lite("t1", "CWE-1", vec![0, 1], (true, true)), lite("t2", "CWE-2", vec![4], (false, true))];
        let mut l = ledger("m", &tasks, |task, k| ((k.token_index + task.len()) % 2 == 0, k.variant_index % 2 == 0));
        let a = flip_table(&l, &AnalysisOptions::default()).unwrap();
        l.outcomes.reverse();
        assert_eq!(a, flip_table(&l, &AnalysisOptions::default()).unwrap());
    }

    #[test]
    fn per_task_granularity_splits_units() {
        let tasks = [lite("t1", "CWE-1", vec![0], (true, true)), lite("t2", "CWE-1", vec![0], (true, true))];
        let l = ledger("m", &tasks, |_, _| (true, true));
        let per_cwe = flip_table(&l, &AnalysisOptions::default()).unwrap();
        assert_eq!(per_cwe.len(), 2);
        assert_eq!(per_cwe[0].n_mutations, 36);
        let per_task = flip_table(
            &l,
            &AnalysisOptions {
                granularity: Granularity::PerTask,
                ..AnalysisOptions::default()
            },
        )
        .unwrap();
        assert_eq!(per_task.len(), 4);
        assert_eq!(per_task[0].key.cwe, "t1");
    }

    fn summary(cwe: &str, flips: usize, sd: usize, orig_pass: bool, n: usize) -> FlipSummary {
        let mut s = FlipSummary::empty(
            CellKey {
                model_id: "m".into(),
                language: LanguageId::C,
                cwe: cwe.into(),
            },
            Metric::FuncSec,
        );
        s.n_mutations = n;
        s.n_flips_total = flips;
        s.n_security_driven = sd;
        if orig_pass {
            s.n_deteriorations = flips;
            s.n_mutations_original_pass = n;
        } else {
            s.n_improvements = flips;
            s.n_mutations_original_fail = n;
        }
        s
    }

    #[test]
    fn affected_fraction_thresholds() {
        let sums: Vec<_> = (0..10)
            .map(|i| summary(&format!("CWE-{i}"), 49, if i < 3 { 10 } else { 9 }, true, 100))
            .collect();
        let sd = affected_cwe_fraction(&sums, Panel::SecurityDriven, 10).unwrap();
        assert_eq!((sd[0].n_affected, sd[0].n_units), (3, 10));
        assert!((sd[0].fraction() - 0.3).abs() < 1e-12);
        assert_eq!(affected_cwe_fraction(&sums, Panel::FuncSec, 1).unwrap()[0].fraction(), 1.0);
        assert_eq!(affected_cwe_fraction(&sums, Panel::FuncSec, 50).unwrap()[0].fraction(), 0.0);
        assert!(affected_cwe_fraction(&sums, Panel::FuncSec, 0).is_err());
        let mut last = f64::INFINITY;
        for tau in 1..60 {
            let f = affected_cwe_fraction(&sums, Panel::SecurityDriven, tau).unwrap()[0].fraction();
            assert!(f <= last);
            last = f;
        }
    }

    #[test]
    fn effect_size_means() {
        let e = effect_sizes(&[summary("A", 9, 0, true, 18)], Metric::FuncSec);
        assert_eq!(e[0].deterioration_mean, Some(0.5));
        assert_eq!(e[0].improvement_mean, None);

        let e = effect_sizes(&[summary("A", 2, 0, true, 10), summary("B", 4, 0, true, 10)], Metric::FuncSec);
        assert!((e[0].deterioration_mean.unwrap() - 0.3).abs() < 1e-12);

        let e = effect_sizes(&[summary("A", 0, 0, true, 10), summary("B", 0, 0, false, 10)], Metric::FuncSec);
        assert_eq!((e[0].deterioration_mean, e[0].improvement_mean), (Some(0.0), Some(0.0)));
    }
}
