use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ProbeCellKey, ProbeError, ProbeTarget};
use crate::analysis::{resolve_outcomes, AnalysisOptions, Granularity};
use crate::runner::{Ledger, PromptRef};

/// Mutated prompts of one (model, language, CWE, target) with their
/// target labels. Vectors are attached per layer from the activation store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeCell {
    pub key: ProbeCellKey,
    pub prompt_keys: Vec<String>,
    pub labels: Vec<bool>,
}

impl ProbeCell {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn minority(&self) -> usize {
        let p = self.n_positive();
        p.min(self.len() - p)
    }

    pub fn flip_rate(&self) -> f64 {
        self.minority() as f64 / self.len() as f64
    }
}

pub(crate) fn admitted(minority: usize, n: usize, min_flip_rate: f64, min_instances: usize) -> bool {
    n >= min_instances && n > 0 && minority as f64 >= min_flip_rate * n as f64 - 1e-9
}

/// Cells whose minority-label fraction reaches `min_flip_rate` (inclusive)
/// with at least `min_instances` mutated prompts. Labels come from the
/// mutant generations at `opts.temperature`.
pub fn assemble_cells(
    ledger: &Ledger,
    opts: &AnalysisOptions,
    min_flip_rate: f64,
    min_instances: usize,
) -> Vec<ProbeCell> {
    let mut cells: BTreeMap<ProbeCellKey, ProbeCell> = BTreeMap::new();
    for ((model, task, pref), r) in resolve_outcomes(&ledger.outcomes, opts) {
        if pref == PromptRef::Original {
            continue;
        }
        let cwe = match opts.granularity {
            Granularity::PerCwe => r.cwe.clone(),
            Granularity::PerTask => task.clone(),
        };
        for target in ProbeTarget::ALL {
            let key = ProbeCellKey {
                model_id: model.clone(),
                language: r.language,
                cwe: cwe.clone(),
                target,
            };
            let cell = cells.entry(key.clone()).or_insert_with(|| ProbeCell {
                key,
                prompt_keys: Vec::new(),
                labels: Vec::new(),
            });
            cell.prompt_keys.push(pref.prompt_key(&task));
            cell.labels.push(target.label(r.functional, r.secure));
        }
    }
    cells
        .into_values()
        .filter(|c| admitted(c.minority(), c.len(), min_flip_rate, min_instances))
        .collect()
}

/// Index sets into a cell. The test indices are only reachable through
/// [`super::TestAudit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevTestSplit {
    pub dev: Vec<usize>,
    pub(crate) test: Vec<usize>,
}

impl DevTestSplit {
    pub fn n_test(&self) -> usize {
        self.test.len()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Stratified hold-out: `round(test_fraction * n)` test instances split
/// between the classes by largest remainder, each class keeping at least
/// one member on both sides.
pub fn split_dev_test(
    cell: &str,
    labels: &[bool],
    test_fraction: f64,
    seed: u64,
) -> Result<DevTestSplit, ProbeError> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(ProbeError::DegenerateStratification(cell.to_string()));
    }
    let n = labels.len();
    let n_test = round_half_up(test_fraction * n as f64).clamp(2, n - 2);

    let exact = |c: usize| n_test as f64 * c as f64 / n as f64;
    let (ep, en) = (exact(pos.len()), exact(neg.len()));
    let (mut tp, mut tn) = (ep.floor() as usize, en.floor() as usize);
    if tp + tn < n_test {
        let (fp, fnn) = (ep - ep.floor(), en - en.floor());
        let pos_first = fp > fnn || (fp == fnn && pos.len() >= neg.len());
        if pos_first {
            tp += 1;
        } else {
            tn += 1;
        }
    }
    // both classes on both sides
    if tp == 0 {
        tp = 1;
        tn -= 1;
    } else if tn == 0 {
        tn = 1;
        tp -= 1;
    }
    if tp >= pos.len() {
        tn += tp - (pos.len() - 1);
        tp = pos.len() - 1;
    } else if tn >= neg.len() {
        tp += tn - (neg.len() - 1);
        tn = neg.len() - 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let mut test: Vec<usize> = neg[..tn].iter().chain(&pos[..tp]).copied().collect();
    let mut dev: Vec<usize> = neg[tn..].iter().chain(&pos[tp..]).copied().collect();
    test.sort_unstable();
    dev.sort_unstable();
    Ok(DevTestSplit { dev, test })
}

/// Fold id in `0..k` for each entry of `labels`: each class is shuffled and
/// dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Zero-mean, unit-variance scaling fit on training rows; constant
/// features are only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty training rows");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }

    pub fn transform_row(&self, x: &[f64]) -> Array1<f64> {
        (Array1::from(x.to_vec()) - &self.mean) / &self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::AnalysisOptions;
    use crate::corpus::LanguageId;
    use crate::mutator::{MutationKey, MutationKind};
    use crate::runner::OutcomeRecord;

    fn labels(n: usize, pos: usize) -> Vec<bool> {
        (0..n).map(|i| i < pos).collect()
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(admitted(10, 100, 0.10, 20));
        assert!(!admitted(9, 100, 0.10, 20));
        assert!(!admitted(5, 19, 0.10, 20));
        assert!(admitted(2, 20, 0.10, 20));
    }

    #[test]
    fn split_sizes() {
        let s = split_dev_test("c", &labels(100, 30), 0.2, 1).unwrap();
        let lab = labels(100, 30);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.test.iter().filter(|&&i| lab[i]).count(), 6);
        let s = split_dev_test("c", &labels(10, 5), 0.2, 1).unwrap();
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.test.iter().filter(|&&i| i < 5).count(), 1);
    }

    #[test]
    fn split_keeps_minority_on_both_sides() {
        let lab = labels(20, 2);
        let s = split_dev_test("c", &lab, 0.2, 3).unwrap();
        assert_eq!(s.test.len(), 4);
        assert_eq!(s.test.iter().filter(|&&i| lab[i]).count(), 1);
        assert_eq!(s.dev.iter().filter(|&&i| lab[i]).count(), 1);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let lab = labels(57, 13);
        let a = split_dev_test("c", &lab, 0.2, 9).unwrap();
        assert_eq!(a, split_dev_test("c", &lab, 0.2, 9).unwrap());
        assert_ne!(a, split_dev_test("c", &lab, 0.2, 10).unwrap());
        let mut all: Vec<usize> = a.dev.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_class() {
        assert!(matches!(
            split_dev_test("c", &labels(30, 1), 0.2, 0),
            Err(ProbeError::DegenerateStratification(_))
        ));
    }

    #[test]
    fn folds_are_stratified() {
        let lab = labels(83, 17);
        let f = stratified_folds(&lab, 5, 4);
        for k in 0..5 {
            let size = f.iter().filter(|&&x| x == k).count();
            let pos = (0..83).filter(|&i| f[i] == k && lab[i]).count();
            assert!((16..=17).contains(&size));
            assert!((3..=4).contains(&pos));
        }
    }

    #[test]
    fn standardizer_uses_training_stats() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let s = Standardizer::fit(&x);
        let t = s.transform(&x);
        assert!((t.column(0).sum()).abs() < 1e-12);
        assert_eq!(t.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn cells_join_labels_by_key() {
        // flips planted at even token positions
        let mut outs = vec![OutcomeRecord::new(
            "m",
            "t",
            LanguageId::C,
            "CWE-1",
            0.0,
            PromptRef::Original,
            0,
            true,
            true,
        )];
        let mut expected = BTreeMap::new();
        for ti in 0..10 {
            for vi in 0..6 {
                let k = MutationKey {
                    kind: MutationKind::SingleChar,
                    token_index: ti,
                    variant_index: vi,
                };
                let pass = ti % 2 == 1;
                outs.push(OutcomeRecord::new(
                    "m",
                    "t",
                    LanguageId::C,
                    "CWE-1",
                    0.0,
                    PromptRef::Mutation(k),
                    0,
                    true,
                    pass,
                ));
                expected.insert(format!("t:{k}"), pass);
            }
        }
        let ledger = Ledger::from_parts(Vec::new(), outs);
        let cells = assemble_cells(&ledger, &AnalysisOptions::default(), 0.10, 20);
        // functional target has no minority, only func_sec is admitted
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.key.target, ProbeTarget::FunctionalAndSecure);
        assert_eq!(c.len(), 60);
        for (k, l) in c.prompt_keys.iter().zip(&c.labels) {
            assert_eq!(expected[k], *l, "{k}");
        }
    }
}
