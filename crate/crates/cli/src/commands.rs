use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use mutaprobe_core::analysis::{
    affected_cwe_fraction, baseline_pass_rates, effect_sizes, flip_table, position_heatmap, position_profiles,
    resolve_outcomes, significance_at_temperature, stability_anomalies, Metric, Panel,
};
use mutaprobe_core::corpus::{corpus_stats, load_corpus, Corpus};
use mutaprobe_core::mutator::{
    build_plan, load_tokenizations, read_mutations, write_mutations, write_tokenizations, EmbeddingTable,
    MutationKind, MutationRecord, TokenizationView, WhitespaceTokenizer,
};
use mutaprobe_core::probe::{
    assemble_cells, group_report, per_cwe_means, run_probe_pipeline, synthesize_activations, ActivationStore,
    Grouping, ProbeTarget, SynthSpec,
};
use mutaprobe_core::report::{self, hash_tree, sha256_bytes, sha256_file, write_json};
use mutaprobe_core::runner::{
    evaluate_generations, generate, read_jsonl, CampaignItem, CampaignOptions, CompletionBackend, HttpEndpoint,
    Ledger, LedgerPaths, OutcomeRecord, StubBackend, TemperatureProfile,
};
use serde_json::json;

use crate::config::{ModelConfig, RunConfig, STUB_ENDPOINT};
use crate::exit::{Failure, FailureClass};

pub const LOCK_FILE: &str = ".mutaprobe.lock";

/// Held for the lifetime of one command; a second invocation on the same
/// output directory fails while it exists.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(output_dir: &Path) -> Result<Self> {
        fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
        let path = output_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id()).ok();
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure::new(
                FailureClass::Validation,
                format!(
                    "{} is locked by another invocation (remove {} if it is stale)",
                    output_dir.display(),
                    path.display()
                ),
            )
            .into()),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Output layout under `output_dir`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn ingest(&self) -> PathBuf {
        self.root.join("ingest")
    }

    pub fn ledger(&self) -> LedgerPaths {
        LedgerPaths::new(self.root.join("ledger"))
    }

    pub fn model_dir(&self, model_id: &str) -> PathBuf {
        LedgerPaths::new(self.root.join("models")).model_dir(model_id)
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn probe(&self) -> PathBuf {
        self.root.join("probe")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn activations(&self, m: &ModelConfig) -> PathBuf {
        m.activations.clone().unwrap_or_else(|| self.model_dir(&m.id).join("activations"))
    }
}

fn missing(msg: impl Into<String>) -> anyhow::Error {
    Failure::missing(msg).into()
}

fn read_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if !cfg.corpus.exists() {
        return Err(missing(format!("corpus {} not found", cfg.corpus.display())));
    }
    load_corpus(&cfg.corpus).with_context(|| format!("reading corpus {}", cfg.corpus.display()))
}

/// Token views per task: the model's tokenization file, or the whitespace
/// tokenizer fitted on the corpus prompts.
fn tokenize(corpus: &Corpus, m: &ModelConfig) -> Result<(BTreeMap<String, TokenizationView>, Option<WhitespaceTokenizer>)> {
    if let Some(p) = &m.tokenization {
        let views = load_tokenizations(p, corpus).with_context(|| format!("model `{}` tokenization", m.id))?;
        if let Some(t) = corpus.tasks().iter().find(|t| !views.contains_key(&t.task_id)) {
            return Err(missing(format!("{}: no tokenization for task `{}`", p.display(), t.task_id)));
        }
        return Ok((views, None));
    }
    let tok = WhitespaceTokenizer::fit(corpus.tasks().iter().map(|t| t.prompt.as_str()));
    let views = corpus
        .tasks()
        .iter()
        .map(|t| (t.task_id.clone(), tok.tokenize(&t.task_id, &t.prompt)))
        .collect();
    Ok((views, Some(tok)))
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let layout = Layout::new(cfg);
    let mut token_rows = Vec::new();
    for m in &cfg.models {
        let (views, _) = tokenize(&corpus, m)?;
        let counts: HashMap<String, usize> = views.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        for (lang, stat) in corpus_stats(&corpus, &counts)? {
            token_rows.push((m.id.clone(), lang, stat));
        }
    }
    let cwe_counts = corpus.cwe_counts();
    let tokens: Vec<_> = token_rows
        .iter()
        .map(|(m, l, s)| json!({"model_id": m, "language": l, "n_tasks": s.n_tasks, "mean_tokens": s.raw_mean, "display": s.display}))
        .collect();
    let stats = json!({
        "n_tasks": corpus.len(),
        "corpus_sha256": sha256_file(&cfg.corpus)?,
        "cwe_counts": cwe_counts,
        "tokens_per_prompt": tokens,
    });
    write_json(&layout.ingest().join("corpus_stats.json"), &stats)?;
    report::tokens_per_prompt_csv(&layout.ingest().join("tokens_per_prompt.csv"), &token_rows)?;

    println!("corpus: {} tasks", corpus.len());
    for (lang, n) in &cwe_counts {
        println!("  {lang}: {n} CWEs");
    }
    for (m, l, s) in &token_rows {
        println!("  {m} {l}: {} tokens per prompt ({:.2})", s.display, s.raw_mean);
    }
    Ok(())
}

fn embedding_table(
    m: &ModelConfig,
    views: &BTreeMap<String, TokenizationView>,
    tok: Option<&WhitespaceTokenizer>,
    model_dir: &Path,
) -> Result<EmbeddingTable> {
    if let (Some(c), Some(v)) = (&m.embeddings, &m.vocab) {
        return EmbeddingTable::load(c, v).with_context(|| format!("model `{}` embeddings", m.id));
    }
    let vocab: Vec<(u32, String)> = match tok {
        Some(t) => t.vocab(),
        None => {
            let set: std::collections::BTreeSet<(u32, String)> = views
                .values()
                .flat_map(|v| v.tokens.iter().map(|t| (t.id, t.surface.clone())))
                .collect();
            set.into_iter().collect()
        }
    };
    let table = EmbeddingTable::from_char_trigrams(&vocab, m.embedding_dim)?;
    table.save(&model_dir.join("embeddings.actv"), &model_dir.join("vocab.json"))?;
    Ok(table)
}

/// True when any profile directory of the model already holds outcomes or
/// generations.
fn has_campaign_data(paths: &LedgerPaths, model_id: &str) -> bool {
    let Ok(entries) = fs::read_dir(paths.model_dir(model_id)) else {
        return false;
    };
    entries.flatten().any(|e| {
        let p = e.path();
        p.is_dir() && (p.join("generations.jsonl").exists() || p.join("outcomes.jsonl").exists())
    })
}

pub fn mutate(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let layout = Layout::new(cfg);
    let paths = layout.ledger();
    for m in &cfg.models {
        let model_dir = layout.model_dir(&m.id);
        fs::create_dir_all(&model_dir).with_context(|| format!("creating {}", model_dir.display()))?;
        let (views, tok) = tokenize(&corpus, m)?;
        if tok.is_some() {
            let ordered: Vec<&TokenizationView> = corpus.tasks().iter().map(|t| &views[&t.task_id]).collect();
            write_tokenizations(&model_dir.join("tokenization.jsonl"), ordered)?;
        }
        let needs_table = cfg.mutation.kinds.contains(&MutationKind::TokenReplace);
        let table = if needs_table {
            Some(embedding_table(m, &views, tok.as_ref(), &model_dir)?)
        } else {
            None
        };

        let mut records: Vec<MutationRecord> = Vec::new();
        for t in corpus.tasks() {
            let plan = build_plan(&views[&t.task_id], table.as_ref(), &cfg.mutation)
                .with_context(|| format!("planning mutations for `{}`", t.task_id))?;
            records.extend(plan.records);
        }

        let target = paths.mutations(&m.id);
        fs::create_dir_all(paths.model_dir(&m.id))?;
        let staged = target.with_extension("jsonl.new");
        write_mutations(&staged, &records)?;
        let fresh = fs::read(&staged)?;
        match fs::read(&target) {
            Ok(old) if old == fresh => {
                fs::remove_file(&staged)?;
                println!("{}: {} mutations (unchanged)", m.id, records.len());
                continue;
            }
            Ok(_) if has_campaign_data(&paths, &m.id) => {
                fs::remove_file(&staged)?;
                return Err(Failure::new(
                    FailureClass::Validation,
                    format!(
                        "{}: new mutation plan differs from the one the ledger was generated with; use a fresh output_dir",
                        target.display()
                    ),
                )
                .into());
            }
            _ => fs::rename(&staged, &target)?,
        }
        let mut per_kind: BTreeMap<MutationKind, usize> = BTreeMap::new();
        for r in &records {
            *per_kind.entry(r.kind).or_default() += 1;
        }
        println!("{}: {} mutations {:?}", m.id, records.len(), per_kind);
    }
    Ok(())
}

fn backend(cfg: &RunConfig, m: &ModelConfig) -> Result<Box<dyn CompletionBackend>> {
    if m.endpoint == STUB_ENDPOINT {
        return Ok(Box::new(StubBackend::default()));
    }
    let timeout = Duration::from_secs_f64(cfg.runner.timeout_s);
    Ok(Box::new(HttpEndpoint::new(&m.endpoint, timeout, cfg.runner.retry.clone())?))
}

fn campaign_options(cfg: &RunConfig, m: &ModelConfig, profile: TemperatureProfile) -> CampaignOptions {
    CampaignOptions {
        model_id: m.id.clone(),
        profile,
        workers: cfg.runner.workers,
        seed: cfg.seed,
        sandbox: cfg.runner.sandbox.clone(),
    }
}

fn load_mutations(paths: &LedgerPaths, model_id: &str) -> Result<Vec<MutationRecord>> {
    let p = paths.mutations(model_id);
    if !p.exists() {
        return Err(missing(format!("{} not found; run `mutaprobe mutate` first", p.display())));
    }
    Ok(read_mutations(&p)?)
}

pub fn generate_all(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let paths = Layout::new(cfg).ledger();
    for m in &cfg.models {
        let mutations = load_mutations(&paths, &m.id)?;
        let items = CampaignItem::collect(&corpus, &mutations);
        let backend = backend(cfg, m)?;
        for &profile in &cfg.profiles {
            let opts = campaign_options(cfg, m, profile);
            let s = generate(backend.as_ref(), &paths, &items, &opts)
                .with_context(|| format!("generating {} {}", m.id, profile.label()))?;
            println!(
                "{} {}: {} requests, {} generations, {} failed",
                m.id,
                profile.label(),
                s.requests_sent,
                s.generations_written,
                s.generation_failures
            );
            if s.generation_failures > 0 {
                tracing::warn!(model = %m.id, profile = %profile.label(), failures = s.generation_failures, "failed generations are retried on the next run");
            }
            if s.greedy_text_anomalies > 0 {
                tracing::warn!(model = %m.id, anomalies = s.greedy_text_anomalies, "T=0 samples disagree");
            }
        }
    }
    Ok(())
}

pub fn evaluate_all(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let paths = Layout::new(cfg).ledger();
    for m in &cfg.models {
        for &profile in &cfg.profiles {
            let g = paths.generations(&m.id, &profile.label());
            if !g.exists() {
                return Err(missing(format!("{} not found; run `mutaprobe generate` first", g.display())));
            }
            let opts = campaign_options(cfg, m, profile);
            let s = evaluate_generations(&corpus, &paths, &opts)
                .with_context(|| format!("evaluating {} {}", m.id, profile.label()))?;
            println!(
                "{} {}: {} outcomes, {} oracle timeouts",
                m.id,
                profile.label(),
                s.outcomes_written,
                s.oracle_timeouts
            );
        }
    }
    Ok(())
}

/// Mutation records of every model plus the outcomes of one profile.
fn profile_ledger(cfg: &RunConfig, corpus: &Corpus, profile: TemperatureProfile) -> Result<Ledger> {
    let paths = Layout::new(cfg).ledger();
    let mut parts = Vec::new();
    let mut outcomes: Vec<OutcomeRecord> = Vec::new();
    for m in &cfg.models {
        parts.push((m.id.clone(), load_mutations(&paths, &m.id)?));
        outcomes.extend(read_jsonl::<OutcomeRecord>(&paths.outcomes(&m.id, &profile.label()))?);
    }
    if outcomes.is_empty() {
        return Err(missing(format!(
            "no outcomes for profile {}; run `mutaprobe generate` and `mutaprobe evaluate` first",
            profile.label()
        )));
    }
    let ledger = Ledger::from_parts(parts, outcomes);
    ledger.validate(Some(corpus))?;
    Ok(ledger)
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let dir = Layout::new(cfg).analysis();
    let profile = cfg.flip_profile()?;
    let ledger = profile_ledger(cfg, &corpus, profile)?;
    let opts = cfg.analysis_options(profile.temperature);

    report::baseline_csv(&dir.join("baseline.csv"), &baseline_pass_rates(&ledger, &opts)?)?;
    let flips = flip_table(&ledger, &opts)?;
    report::flip_table_csv(&dir.join("flips.csv"), &flips)?;
    let mut affected = Vec::new();
    for panel in Panel::ALL {
        for &tau in &cfg.analysis.taus {
            affected.extend(affected_cwe_fraction(&flips, panel, tau)?);
        }
    }
    report::affected_fraction_csv(&dir.join("affected_fraction.csv"), &affected)?;
    let effects: Vec<_> = Metric::ALL.iter().flat_map(|&m| effect_sizes(&flips, m)).collect();
    report::effect_sizes_csv(&dir.join("effect_sizes.csv"), &effects)?;
    report::position_csv(&dir.join("position.csv"), &position_profiles(&ledger, &opts)?)?;
    let mut maps = Vec::new();
    for m in Metric::ALL {
        maps.push((m, position_heatmap(&ledger, m, &opts)?));
    }
    report::heatmap_csv(&dir.join("heatmap.csv"), &maps)?;

    let mut sig = Vec::new();
    match cfg.significance_profile() {
        Some(p) => {
            let l = profile_ledger(cfg, &corpus, p)?;
            sig = significance_at_temperature(&l.outcomes, p.temperature, cfg.analysis.alpha)?;
        }
        None => tracing::warn!(
            temperature = cfg.analysis.significance_temperature,
            "no profile at the significance temperature; significance.csv is empty"
        ),
    }
    report::significance_csv(&dir.join("significance.csv"), &sig)?;

    let mut stability = Vec::new();
    for &p in cfg.profiles.iter().filter(|p| p.n_samples >= 2) {
        let l = profile_ledger(cfg, &corpus, p)?;
        for m in &cfg.models {
            let own: Vec<OutcomeRecord> = l.outcomes.iter().filter(|o| o.model_id == m.id).cloned().collect();
            stability.push((m.id.clone(), p.temperature, stability_anomalies(&own, &cfg.analysis_options(p.temperature))));
        }
    }
    report::stability_csv(&dir.join("stability.csv"), &stability)?;

    let n_sig = sig.iter().filter(|r| r.significant).count();
    println!(
        "analysis: {} flip rows, {} affected-fraction rows, {}/{} significant mutants -> {}",
        flips.len(),
        affected.len(),
        n_sig,
        sig.len(),
        dir.display()
    );
    Ok(())
}

pub fn probe(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let layout = Layout::new(cfg);
    let dir = layout.probe();
    let profile = cfg.flip_profile()?;
    let ledger = profile_ledger(cfg, &corpus, profile)?;
    let opts = cfg.analysis_options(profile.temperature);
    let s = &cfg.probe.settings;
    let cells = assemble_cells(&ledger, &opts, s.min_flip_rate, s.min_instances);

    let mut stores = BTreeMap::new();
    for m in &cfg.models {
        if !cells.iter().any(|c| c.key.model_id == m.id) {
            continue;
        }
        let adir = layout.activations(m);
        if !adir.is_dir() {
            return Err(missing(format!(
                "activations for model `{}` not found at {}; run the extractor or `mutaprobe synth-activations`",
                m.id,
                adir.display()
            )));
        }
        stores.insert(m.id.clone(), ActivationStore::open(&adir)?);
    }
    let grouping = match &cfg.probe.grouping {
        Some(p) if !p.exists() => return Err(missing(format!("grouping file {} not found", p.display()))),
        Some(p) => Some(Grouping::load(p)?),
        None => None,
    };

    let out = run_probe_pipeline(cells, &stores, s)?;
    report::probe_cells_csv(&dir.join("cells.csv"), &out.cells)?;
    report::probe_search_csv(&dir.join("phase1.csv"), &out.models, 1)?;
    report::probe_search_csv(&dir.join("phase2.csv"), &out.models, 2)?;
    report::layer_profile_csv(&dir.join("layer_profile.csv"), &out.models)?;
    report::per_cwe_csv(&dir.join("per_cwe.csv"), &out.cells, grouping.as_ref())?;

    let mut groups = serde_json::Map::new();
    if let Some(g) = &grouping {
        for target in ProbeTarget::ALL {
            let means = per_cwe_means(&out.cells, target);
            let entry = match group_report(&means, g, cfg.probe.bootstrap_resamples, cfg.probe.ci_level, cfg.seed) {
                Ok(r) => serde_json::to_value(r)?,
                Err(e) => {
                    tracing::warn!(target = %target, error = %e, "group comparison skipped");
                    json!({"skipped": e.to_string()})
                }
            };
            groups.insert(target.to_string(), entry);
        }
    }
    write_json(&dir.join("groups.json"), &groups)?;
    let summary = json!({
        "profile": profile.label(),
        "models": out.models.iter().map(|m| json!({
            "model_id": m.model_id,
            "n_blocks": m.n_blocks,
            "layer_grid": m.layer_grid,
            "chosen": m.chosen.to_string(),
        })).collect::<Vec<_>>(),
        "dropped": out.dropped,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    let mut log = out.audit_log.join("\n");
    log.push('\n');
    fs::write(dir.join("audit.log"), log)?;
    println!("probe: {} cells, {} dropped -> {}", out.cells.len(), out.dropped.len(), dir.display());
    Ok(())
}

/// Synthetic activations for every prompt of the flip profile, labelled by
/// the resolved functional outcome.
pub fn synth_activations(cfg: &RunConfig, n_blocks: usize, hidden_dim: usize, signal_layers: Vec<usize>, margin: f64) -> Result<()> {
    let corpus = read_corpus(cfg)?;
    let layout = Layout::new(cfg);
    let profile = cfg.flip_profile()?;
    let ledger = profile_ledger(cfg, &corpus, profile)?;
    let resolved = resolve_outcomes(&ledger.outcomes, &cfg.analysis_options(profile.temperature));
    let spec = SynthSpec {
        n_blocks,
        hidden_dim,
        signal_layers,
        margin,
        seed: cfg.seed,
    };
    for m in &cfg.models {
        let items: Vec<(String, bool)> = resolved
            .iter()
            .filter(|((model, _, _), _)| model == &m.id)
            .map(|((_, task, pref), r)| (pref.prompt_key(task), r.functional))
            .collect();
        let dir = layout.activations(m);
        let n = synthesize_activations(&dir, &items, &spec)?;
        println!("{}: {n} activation files -> {}", m.id, dir.display());
    }
    Ok(())
}

fn copy_csvs(from: &Path, to: &Path, copied: &mut Vec<String>) -> Result<()> {
    let mut names: Vec<PathBuf> = fs::read_dir(from)
        .with_context(|| format!("reading {}", from.display()))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json" | "log")))
        .collect();
    names.sort();
    for p in names {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if copied.contains(&name) {
            return Err(anyhow::anyhow!("two report files named {name}"));
        }
        fs::copy(&p, to.join(&name)).with_context(|| format!("copying {}", p.display()))?;
        copied.push(name);
    }
    Ok(())
}

/// Inputs the run read, by role.
fn input_hashes(cfg: &RunConfig, layout: &Layout) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    out.insert("corpus".to_string(), sha256_file(&cfg.corpus)?);
    if let Some(g) = &cfg.probe.grouping {
        out.insert("grouping".to_string(), sha256_file(g)?);
    }
    for m in &cfg.models {
        for (role, p) in [("tokenization", &m.tokenization), ("embeddings", &m.embeddings), ("vocab", &m.vocab)] {
            if let Some(p) = p {
                out.insert(format!("models/{}/{role}", m.id), sha256_file(p)?);
            }
        }
        let adir = layout.activations(m);
        if adir.is_dir() {
            let tree = hash_tree(&adir, &|_| false)?;
            let digest = sha256_bytes(serde_json::to_string(&tree)?.as_bytes());
            out.insert(format!("models/{}/activations", m.id), digest);
        }
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    for (dir, cmd) in [(layout.ingest(), "ingest"), (layout.analysis(), "analyze")] {
        if !dir.is_dir() {
            return Err(missing(format!("{} not found; run `mutaprobe {cmd}` first", dir.display())));
        }
    }
    let out = layout.report();
    if out.exists() {
        fs::remove_dir_all(&out).with_context(|| format!("clearing {}", out.display()))?;
    }
    fs::create_dir_all(&out)?;
    let mut copied = Vec::new();
    copy_csvs(&layout.ingest(), &out, &mut copied)?;
    copy_csvs(&layout.analysis(), &out, &mut copied)?;
    let probed = layout.probe().is_dir();
    if probed {
        copy_csvs(&layout.probe(), &out, &mut copied)?;
    } else {
        tracing::warn!("no probe outputs; the report has no probe tables");
    }

    let ledger_root = layout.ledger().root;
    let ledger_files = hash_tree(&ledger_root, &|p| p.file_name().is_some_and(|n| n == "oracle_logs"))?;
    let artifacts = hash_tree(&out, &|_| false)?;
    let config_value = serde_json::to_value(cfg)?;
    let manifest = json!({
        "tool": "mutaprobe",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": config_value,
        "config_sha256": sha256_bytes(serde_json::to_string(&config_value)?.as_bytes()),
        "seeds": {
            "seed": cfg.seed,
            "probe": cfg.probe.settings.seed,
            "bootstrap_group_i": cfg.seed,
            "bootstrap_group_d": cfg.seed.wrapping_add(1),
            "request_seed": "fnv1a_64(\"{seed}|{model_id}|{prompt_key}\")",
            "probe_cell_seed": "fnv1a_64(\"{probe_seed}|{cell_key}\")",
        },
        "mlp_recipe": cfg.probe.settings.mlp,
        "inputs": input_hashes(cfg, &layout)?,
        "ledger_sha256": sha256_bytes(serde_json::to_string(&ledger_files)?.as_bytes()),
        "ledger_files": ledger_files,
        "probe_included": probed,
        "artifacts": artifacts,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("report: {} files + manifest.json -> {}", copied.len(), out.display());
    Ok(())
}

/// Every step in order. Probing is skipped with a warning when a model has
/// no activations.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    ingest(cfg)?;
    mutate(cfg)?;
    generate_all(cfg)?;
    evaluate_all(cfg)?;
    analyze(cfg)?;
    let layout = Layout::new(cfg);
    if cfg.models.iter().all(|m| layout.activations(m).is_dir()) {
        probe(cfg)?;
    } else {
        tracing::warn!("activations missing; skipping probe");
    }
    report(cfg)
}
