use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::activations::{layer_grid, relative_depth, ActivationStore};
use super::data::{split_dev_test, stratified_folds, DevTestSplit, ProbeCell};
use super::logistic::LogisticProbe;
use super::mlp::{MlpProbe, MlpTraining};
use super::{ProbeCellKey, ProbeConfig, ProbeError};
use crate::mutator::fnv1a_64;
use crate::stats::roc_auc;

/// Every knob of the probe pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub min_flip_rate: f64,
    pub min_instances: usize,
    pub test_fraction: f64,
    pub folds: usize,
    pub grid_size: usize,
    pub phase1_c: Vec<f64>,
    pub phase1_hidden: Vec<(usize, usize)>,
    pub phase1_dropout: f64,
    pub phase1_weight_decay: f64,
    pub phase2_c: Vec<f64>,
    pub phase2_dropout: Vec<f64>,
    pub phase2_weight_decay: Vec<f64>,
    pub mlp: MlpTraining,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            min_flip_rate: 0.10,
            min_instances: 20,
            test_fraction: 0.2,
            folds: 5,
            grid_size: 10,
            phase1_c: vec![0.1, 1.0],
            phase1_hidden: vec![(1024, 256), (256, 64)],
            phase1_dropout: 0.3,
            phase1_weight_decay: 1e-4,
            phase2_c: vec![0.25, 0.5, 1.0, 2.0],
            phase2_dropout: vec![0.1, 0.3, 0.5],
            phase2_weight_decay: vec![1e-5, 1e-4, 1e-3],
            mlp: MlpTraining::default(),
            seed: 0,
        }
    }
}

impl ProbeSettings {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidParameter(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} not in (0,1)", self.test_fraction));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.grid_size == 0 || self.phase1_c.is_empty() && self.phase1_hidden.is_empty() {
            return bad("empty phase-1 grid".into());
        }
        if !(0.0..=0.5).contains(&self.min_flip_rate) {
            return bad(format!("min_flip_rate {} not in [0, 0.5]", self.min_flip_rate));
        }
        if self.mlp.batch_size == 0 {
            return bad("mlp batch_size must be positive".into());
        }
        Ok(())
    }

    fn phase1_configs(&self, layer: usize) -> Vec<ProbeConfig> {
        let mut v: Vec<ProbeConfig> = self
            .phase1_c
            .iter()
            .map(|&c| ProbeConfig::LogisticL2 { layer, c })
            .collect();
        v.extend(self.phase1_hidden.iter().map(|&hidden| ProbeConfig::Mlp2Layer {
            layer,
            hidden,
            dropout: self.phase1_dropout,
            weight_decay: self.phase1_weight_decay,
        }));
        v
    }

    /// Phase-2 candidates in tie-break preference order: smaller C first,
    /// then larger dropout, then larger weight decay.
    fn phase2_configs(&self, winner: &ProbeConfig) -> Vec<ProbeConfig> {
        match *winner {
            ProbeConfig::LogisticL2 { layer, .. } => {
                let mut cs = self.phase2_c.clone();
                cs.sort_by(f64::total_cmp);
                cs.into_iter().map(|c| ProbeConfig::LogisticL2 { layer, c }).collect()
            }
            ProbeConfig::Mlp2Layer { layer, hidden, .. } => {
                let mut ds = self.phase2_dropout.clone();
                let mut ws = self.phase2_weight_decay.clone();
                ds.sort_by(|a, b| b.total_cmp(a));
                ws.sort_by(|a, b| b.total_cmp(a));
                ds.iter()
                    .flat_map(|&dropout| {
                        ws.iter().map(move |&weight_decay| ProbeConfig::Mlp2Layer {
                            layer,
                            hidden,
                            dropout,
                            weight_decay,
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedProbe {
    Logistic(LogisticProbe),
    Mlp(MlpProbe),
}

impl TrainedProbe {
    pub fn score_matrix(&self, x: &Array2<f64>) -> Array1<f64> {
        match self {
            TrainedProbe::Logistic(p) => p.score_matrix(x),
            TrainedProbe::Mlp(p) => p.score_matrix(x),
        }
    }

    pub fn nonconverged(&self) -> bool {
        match self {
            TrainedProbe::Logistic(p) => !p.fit.converged,
            TrainedProbe::Mlp(_) => false,
        }
    }
}

pub fn train_probe(
    x: &Array2<f64>,
    y: &[bool],
    config: &ProbeConfig,
    recipe: &MlpTraining,
    seed: u64,
) -> Result<TrainedProbe, ProbeError> {
    config.validate()?;
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(crate::stats::StatsError::SingleClass.into());
    }
    Ok(match *config {
        ProbeConfig::LogisticL2 { c, .. } => TrainedProbe::Logistic(LogisticProbe::train(x, y, c)),
        ProbeConfig::Mlp2Layer {
            hidden,
            dropout,
            weight_decay,
            ..
        } => TrainedProbe::Mlp(MlpProbe::train(x, y, hidden, dropout, weight_decay, recipe, seed)),
    })
}

/// Mean validation AUC over the folds whose training and validation parts
/// both contain the two classes. `None` when no fold qualifies.
pub fn cross_validate(
    x: &Array2<f64>,
    y: &[bool],
    folds: &[usize],
    config: &ProbeConfig,
    recipe: &MlpTraining,
    seed: u64,
) -> Result<Option<f64>, ProbeError> {
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let mut aucs = Vec::new();
    for f in 0..k {
        let (val, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] == f);
        let yv: Vec<bool> = val.iter().map(|&i| y[i]).collect();
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let both = |v: &[bool]| v.iter().any(|&l| l) && v.iter().any(|&l| !l);
        if !both(&yv) || !both(&yt) {
            continue;
        }
        let probe = train_probe(&x.select(Axis(0), &train), &yt, config, recipe, seed.wrapping_add(f as u64))?;
        let s = probe.score_matrix(&x.select(Axis(0), &val));
        aucs.push(roc_auc(&yv, s.as_slice().expect("contiguous"))?);
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

/// An admitted cell with its fixed dev/test split and dev folds.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub cell: ProbeCell,
    pub split: DevTestSplit,
    /// Fold id per entry of `split.dev`.
    pub folds: Vec<usize>,
    pub seed: u64,
}

impl CellPlan {
    fn name(&self) -> String {
        self.cell.key.to_string()
    }

    fn dev_labels(&self) -> Vec<bool> {
        self.split.dev.iter().map(|&i| self.cell.labels[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedCell {
    pub key: ProbeCellKey,
    pub reason: String,
}

fn cell_seed(settings: &ProbeSettings, name: &str) -> u64 {
    fnv1a_64(format!("{}|{name}", settings.seed).as_bytes())
}

/// Splits and folds for each cell; cells that cannot be stratified are
/// dropped with a reason.
pub fn plan_cells(cells: Vec<ProbeCell>, settings: &ProbeSettings) -> (Vec<CellPlan>, Vec<DroppedCell>) {
    let mut plans = Vec::new();
    let mut dropped = Vec::new();
    for cell in cells {
        let name = cell.key.to_string();
        let seed = cell_seed(settings, &name);
        match split_dev_test(&name, &cell.labels, settings.test_fraction, seed) {
            Ok(split) => {
                let dev_labels: Vec<bool> = split.dev.iter().map(|&i| cell.labels[i]).collect();
                let folds = stratified_folds(&dev_labels, settings.folds, seed ^ 0xf01d);
                plans.push(CellPlan {
                    cell,
                    split,
                    folds,
                    seed,
                });
            }
            Err(e) => {
                tracing::warn!(cell = %name, "dropped: {e}");
                dropped.push(DroppedCell {
                    key: cell.key,
                    reason: e.to_string(),
                });
            }
        }
    }
    (plans, dropped)
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break local;
                        }
                        local.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("probe worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every item mapped")).collect()
}

/// One layer's vectors for every prompt the plans use.
struct LayerMatrix {
    x: Array2<f64>,
    row: BTreeMap<String, usize>,
}

impl LayerMatrix {
    fn load(store: &ActivationStore, layer: usize, plans: &[CellPlan]) -> Result<Self, ProbeError> {
        let keys: BTreeSet<&String> = plans.iter().flat_map(|p| &p.cell.prompt_keys).collect();
        let keys: Vec<String> = keys.into_iter().cloned().collect();
        let vecs = store.load_layer(layer, &keys)?;
        let mut x = Array2::zeros((keys.len(), store.hidden_dim()));
        for (r, v) in vecs.iter().enumerate() {
            for (c, &val) in v.iter().enumerate() {
                x[[r, c]] = val as f64;
            }
        }
        let row = keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        Ok(Self { x, row })
    }

    fn rows(&self, plan: &CellPlan, idx: &[usize]) -> Array2<f64> {
        let r: Vec<usize> = idx.iter().map(|&i| self.row[&plan.cell.prompt_keys[i]]).collect();
        self.x.select(Axis(0), &r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedConfig {
    pub config: ProbeConfig,
    /// Unweighted mean over cells with a defined CV AUC.
    pub mean_cv_auc: Option<f64>,
    pub n_cells: usize,
    pub per_cell: Vec<Option<f64>>,
}

fn score_configs(
    layer: &LayerMatrix,
    plans: &[CellPlan],
    configs: &[ProbeConfig],
    recipe: &MlpTraining,
) -> Result<Vec<RankedConfig>, ProbeError> {
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..plans.len()).map(move |p| (c, p)))
        .collect();
    let results = par_map(&jobs, |&(c, p)| {
        let plan = &plans[p];
        let x = layer.rows(plan, &plan.split.dev);
        cross_validate(&x, &plan.dev_labels(), &plan.folds, &configs[c], recipe, plan.seed)
    });
    let mut results = results.into_iter();
    configs
        .iter()
        .map(|&config| {
            let per_cell = (0..plans.len())
                .map(|_| results.next().expect("one result per job"))
                .collect::<Result<Vec<_>, _>>()?;
            let defined: Vec<f64> = per_cell.iter().flatten().copied().collect();
            Ok(RankedConfig {
                config,
                mean_cv_auc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                n_cells: defined.len(),
                per_cell,
            })
        })
        .collect()
}

fn rank(v: &mut [RankedConfig]) {
    let key = |r: &RankedConfig| r.mean_cv_auc.unwrap_or(f64::NEG_INFINITY);
    v.sort_by(|a, b| key(b).total_cmp(&key(a)));
}

/// Every phase-1 configuration over the layer grid, scored by mean CV AUC
/// across `plans` and ranked descending (stable in grid order). Layers are
/// loaded one at a time.
pub fn phase1_search(
    store: &ActivationStore,
    plans: &[CellPlan],
    settings: &ProbeSettings,
) -> Result<Vec<RankedConfig>, ProbeError> {
    if plans.is_empty() {
        return Err(ProbeError::InsufficientCells(store.dir().display().to_string()));
    }
    let mut all = Vec::new();
    for layer in layer_grid(store.n_blocks(), settings.grid_size) {
        let m = LayerMatrix::load(store, layer, plans)?;
        all.extend(score_configs(&m, plans, &settings.phase1_configs(layer), &settings.mlp)?);
    }
    rank(&mut all);
    Ok(all)
}

/// Local grid around the phase-1 winner at its layer. Returns the chosen
/// configuration and the candidates in preference order; the first
/// candidate reaching the best score wins.
pub fn phase2_refine(
    store: &ActivationStore,
    plans: &[CellPlan],
    winner: &ProbeConfig,
    settings: &ProbeSettings,
) -> Result<(ProbeConfig, Vec<RankedConfig>), ProbeError> {
    let m = LayerMatrix::load(store, winner.layer(), plans)?;
    let scored = score_configs(&m, plans, &settings.phase2_configs(winner), &settings.mlp)?;
    let mut best: Option<(f64, ProbeConfig)> = None;
    for r in &scored {
        let s = r.mean_cv_auc.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(b, _)| s > b + 1e-12) {
            best = Some((s, r.config));
        }
    }
    Ok((best.map_or(*winner, |(_, c)| c), scored))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub relative_depth: f64,
    pub mean_cv_auc: Option<f64>,
}

fn same_hyperparameters(a: &ProbeConfig, b: &ProbeConfig) -> bool {
    match (*a, *b) {
        (ProbeConfig::LogisticL2 { c: x, .. }, ProbeConfig::LogisticL2 { c: y, .. }) => x == y,
        (
            ProbeConfig::Mlp2Layer { hidden: h1, dropout: d1, weight_decay: w1, .. },
            ProbeConfig::Mlp2Layer { hidden: h2, dropout: d2, weight_decay: w2, .. },
        ) => h1 == h2 && d1 == d2 && w1 == w2,
        _ => false,
    }
}

/// Mean CV AUC per grid layer for the configurations sharing `reference`'s
/// family and hyperparameters, read from the phase-1 results.
pub fn layer_profile(phase1: &[RankedConfig], reference: &ProbeConfig, n_blocks: usize) -> Vec<LayerPoint> {
    let mut v: Vec<LayerPoint> = phase1
        .iter()
        .filter(|r| same_hyperparameters(&r.config, reference))
        .map(|r| LayerPoint {
            layer: r.config.layer(),
            relative_depth: relative_depth(r.config.layer(), n_blocks),
            mean_cv_auc: r.mean_cv_auc,
        })
        .collect();
    v.sort_by_key(|p| p.layer);
    v
}

/// Gatekeeper for held-out data: each cell's test split can be scored once.
#[derive(Debug, Default)]
pub struct TestAudit {
    reads: BTreeSet<String>,
    log: Vec<String>,
}

impl TestAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evaluate(
        &mut self,
        cell: &str,
        split: &DevTestSplit,
        labels: &[bool],
        score: impl FnOnce(&[usize]) -> Array1<f64>,
    ) -> Result<f64, ProbeError> {
        if !self.reads.insert(cell.to_string()) {
            self.log.push(format!("{cell}\trefused"));
            return Err(ProbeError::TestSplitReused(cell.to_string()));
        }
        let y: Vec<bool> = split.test.iter().map(|&i| labels[i]).collect();
        let s = score(&split.test);
        let auc = roc_auc(&y, s.as_slice().expect("contiguous"));
        match &auc {
            Ok(a) => self.log.push(format!("{cell}\tn_test={}\tauc={a:.6}", y.len())),
            Err(e) => self.log.push(format!("{cell}\tn_test={}\terror={e}", y.len())),
        }
        Ok(auc?)
    }

    pub fn was_read(&self, cell: &str) -> bool {
        self.reads.contains(cell)
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub key: ProbeCellKey,
    pub n: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub flip_rate: f64,
    pub config: ProbeConfig,
    pub cv_auc: Option<f64>,
    pub test_auc: f64,
    pub nonconverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSearch {
    pub model_id: String,
    pub n_blocks: usize,
    pub layer_grid: Vec<usize>,
    pub phase1: Vec<RankedConfig>,
    pub phase2: Vec<RankedConfig>,
    pub chosen: ProbeConfig,
    pub profile: Vec<LayerPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub models: Vec<ModelSearch>,
    pub cells: Vec<CellResult>,
    pub dropped: Vec<DroppedCell>,
    pub audit_log: Vec<String>,
}

/// Search, refit and held-out evaluation for every admitted cell. The
/// search runs once per model over all of its cells, both targets pooled;
/// the chosen configuration is then refit on each cell's dev split and
/// scored once on its test split.
pub fn run_probe_pipeline(
    cells: Vec<ProbeCell>,
    stores: &BTreeMap<String, ActivationStore>,
    settings: &ProbeSettings,
) -> Result<PipelineOutput, ProbeError> {
    settings.validate()?;
    let mut by_model: BTreeMap<String, Vec<ProbeCell>> = BTreeMap::new();
    for c in cells {
        by_model.entry(c.key.model_id.clone()).or_default().push(c);
    }
    if by_model.is_empty() {
        return Err(ProbeError::InsufficientCells("any model".into()));
    }

    let mut out = PipelineOutput {
        models: Vec::new(),
        cells: Vec::new(),
        dropped: Vec::new(),
        audit_log: Vec::new(),
    };
    let mut audit = TestAudit::new();
    for (model, cells) in by_model {
        let store = stores.get(&model).ok_or_else(|| {
            ProbeError::MissingActivation(cells[0].prompt_keys.first().cloned().unwrap_or_else(|| model.clone()))
        })?;
        if let Some(k) = cells.iter().flat_map(|c| &c.prompt_keys).find(|k| !store.contains(k)) {
            return Err(ProbeError::MissingActivation(k.clone()));
        }
        let (plans, dropped) = plan_cells(cells, settings);
        out.dropped.extend(dropped);
        if plans.is_empty() {
            tracing::warn!(model = %model, "no probe cells survive stratification");
            continue;
        }
        tracing::info!(model = %model, cells = plans.len(), "probe phase 1");
        let phase1 = phase1_search(store, &plans, settings)?;
        let winner = phase1[0].config;
        let (chosen, phase2) = phase2_refine(store, &plans, &winner, settings)?;
        let cv = phase2
            .iter()
            .find(|r| r.config == chosen)
            .map(|r| r.per_cell.clone())
            .unwrap_or_else(|| vec![None; plans.len()]);

        let m = LayerMatrix::load(store, chosen.layer(), &plans)?;
        let trained = par_map(&plans, |plan| {
            let x = m.rows(plan, &plan.split.dev);
            train_probe(&x, &plan.dev_labels(), &chosen, &settings.mlp, plan.seed ^ 0xf1a1)
        });
        for ((plan, probe), cv_auc) in plans.iter().zip(trained).zip(cv) {
            let name = plan.name();
            let probe = match probe {
                Ok(p) => p,
                Err(e) => {
                    out.dropped.push(DroppedCell {
                        key: plan.cell.key.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if probe.nonconverged() {
                tracing::warn!(cell = %name, "final probe did not converge");
            }
            let test_auc = audit.evaluate(&name, &plan.split, &plan.cell.labels, |idx| {
                probe.score_matrix(&m.rows(plan, idx))
            })?;
            out.cells.push(CellResult {
                key: plan.cell.key.clone(),
                n: plan.cell.len(),
                n_dev: plan.split.dev.len(),
                n_test: plan.split.n_test(),
                flip_rate: plan.cell.flip_rate(),
                config: chosen,
                cv_auc,
                test_auc,
                nonconverged: probe.nonconverged(),
            });
        }
        out.models.push(ModelSearch {
            model_id: model,
            n_blocks: store.n_blocks(),
            layer_grid: layer_grid(store.n_blocks(), settings.grid_size),
            profile: layer_profile(&phase1, &winner, store.n_blocks()),
            phase1,
            phase2,
            chosen,
        });
    }
    out.audit_log = audit.log().to_vec();
    Ok(out)
}
