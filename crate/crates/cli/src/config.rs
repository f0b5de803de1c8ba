use std::path::{Path, PathBuf};

use mutaprobe_core::analysis::{AnalysisOptions, AnomalyPolicy, Granularity};
use mutaprobe_core::mutator::PlanConfig;
use mutaprobe_core::probe::ProbeSettings;
use mutaprobe_core::runner::{RetryPolicy, SandboxPolicy, TemperatureProfile};
use serde::{Deserialize, Serialize};

use crate::exit::{Failure, FailureClass};

/// Endpoint value that selects the built-in deterministic stub.
pub const STUB_ENDPOINT: &str = "stub";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    /// `stub` or the base URL of a completion server.
    pub endpoint: String,
    /// Tokenization JSONL from the extractor; whitespace tokenizer if absent.
    #[serde(default)]
    pub tokenization: Option<PathBuf>,
    /// Embeddings container and vocab sidecar; character-trigram table if absent.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    /// Directory of per-prompt activation containers.
    #[serde(default)]
    pub activations: Option<PathBuf>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn default_embedding_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub taus: Vec<usize>,
    pub alpha: f64,
    pub granularity: Granularity,
    pub anomaly_policy: AnomalyPolicy,
    /// Profile label for flips, positions and probing; the first T=0
    /// profile when unset.
    pub flip_profile: Option<String>,
    pub significance_temperature: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            taus: vec![1, 10, 50],
            alpha: 0.05,
            granularity: Granularity::PerCwe,
            anomaly_policy: AnomalyPolicy::FirstSample,
            flip_profile: None,
            significance_temperature: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfigSection {
    pub settings: ProbeSettings,
    /// JSON map of CWE to group (`"I"` or `"D"`).
    pub grouping: Option<PathBuf>,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
}

impl Default for ProbeConfigSection {
    fn default() -> Self {
        Self {
            settings: ProbeSettings::default(),
            grouping: None,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    pub workers: usize,
    /// HTTP timeout per completion request.
    pub timeout_s: f64,
    pub retry: RetryPolicy,
    pub sandbox: SandboxPolicy,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            timeout_s: 120.0,
            retry: RetryPolicy::default(),
            sandbox: SandboxPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<TemperatureProfile>,
    #[serde(default)]
    pub mutation: PlanConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub probe: ProbeConfigSection,
    #[serde(default)]
    pub runner: RunnerConfig,
}

fn default_profiles() -> Vec<TemperatureProfile> {
    vec![TemperatureProfile::new(0.0, 1), TemperatureProfile::new(0.8, 10)]
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub paper_preset: bool,
    pub seed: Option<u64>,
    pub taus: Vec<usize>,
    pub endpoint: Option<String>,
    pub timeout_s: Option<f64>,
    pub skip_nonword_tokens: bool,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::new(FailureClass::Validation, msg).into()
}

impl RunConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::missing(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        for m in &mut self.models {
            for p in [&mut m.tokenization, &mut m.embeddings, &mut m.vocab, &mut m.activations]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
        if let Some(g) = &mut self.probe.grouping {
            fix(g);
        }
    }

    /// The preset first, then the flags.
    pub fn apply(&mut self, o: &Overrides) {
        if o.paper_preset {
            self.apply_paper_preset();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if !o.taus.is_empty() {
            self.analysis.taus = o.taus.clone();
        }
        if let Some(e) = &o.endpoint {
            for m in &mut self.models {
                m.endpoint = e.clone();
            }
        }
        if let Some(t) = o.timeout_s {
            self.runner.timeout_s = t;
        }
        if o.skip_nonword_tokens {
            self.mutation.skip_nonword_tokens = true;
        }
        self.probe.settings.seed = self.seed;
    }

    pub fn apply_paper_preset(&mut self) {
        self.profiles = vec![
            TemperatureProfile::new(0.0, 1),
            TemperatureProfile::new(0.0, 3),
            TemperatureProfile::new(0.8, 10),
        ];
        self.analysis.taus = vec![1, 10, 50];
        self.analysis.alpha = 0.05;
        self.analysis.significance_temperature = 0.8;
        self.mutation.k = 10;
        self.mutation.variants_per_kind = 6;
        let s = &mut self.probe.settings;
        s.test_fraction = 0.2;
        s.folds = 5;
        self.probe.bootstrap_resamples = 1000;
        self.probe.ci_level = 0.95;
    }

    /// Checks values; with `need_corpus` the corpus file must exist.
    pub fn validate(&self, need_corpus: bool) -> anyhow::Result<()> {
        if self.models.is_empty() {
            return Err(invalid("config lists no models"));
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("model `{}` listed twice", w[0])));
        }
        for m in &self.models {
            if m.id.is_empty() {
                return Err(invalid("empty model id"));
            }
            if m.embeddings.is_some() != m.vocab.is_some() {
                return Err(invalid(format!("model `{}`: embeddings and vocab go together", m.id)));
            }
            if m.embedding_dim == 0 {
                return Err(invalid(format!("model `{}`: embedding_dim must be positive", m.id)));
            }
            for p in [&m.tokenization, &m.embeddings, &m.vocab].into_iter().flatten() {
                if !p.exists() {
                    return Err(Failure::missing(format!("model `{}`: {} not found", m.id, p.display())).into());
                }
            }
        }
        if need_corpus && !self.corpus.exists() {
            return Err(Failure::missing(format!("corpus {} not found", self.corpus.display())).into());
        }
        if self.profiles.is_empty() {
            return Err(invalid("no temperature profiles"));
        }
        for p in &self.profiles {
            if !(p.temperature >= 0.0 && p.temperature.is_finite()) || p.n_samples == 0 {
                return Err(invalid(format!("bad profile {}", p.label())));
            }
        }
        let mut labels: Vec<String> = self.profiles.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.profiles.len() {
            return Err(invalid("duplicate temperature profiles"));
        }
        if self.analysis.taus.is_empty() || self.analysis.taus.contains(&0) {
            return Err(invalid("taus must be non-empty and >= 1"));
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            return Err(invalid(format!("alpha {} not in (0,1)", self.analysis.alpha)));
        }
        if let Some(l) = &self.analysis.flip_profile {
            if !labels.contains(l) {
                return Err(invalid(format!("flip_profile `{l}` is not a configured profile")));
            }
        }
        if self.mutation.kinds.is_empty() || self.mutation.variants_per_kind == 0 {
            return Err(invalid("mutation config selects nothing"));
        }
        if self.runner.workers == 0 {
            return Err(invalid("runner.workers must be positive"));
        }
        if !(self.runner.timeout_s > 0.0) {
            return Err(invalid("runner.timeout_s must be positive"));
        }
        if !(self.probe.ci_level > 0.0 && self.probe.ci_level < 1.0) || self.probe.bootstrap_resamples == 0 {
            return Err(invalid("bad bootstrap settings"));
        }
        self.probe
            .settings
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    /// Profile used for flips, positions and probing.
    pub fn flip_profile(&self) -> anyhow::Result<TemperatureProfile> {
        if let Some(l) = &self.analysis.flip_profile {
            return self
                .profiles
                .iter()
                .find(|p| &p.label() == l)
                .copied()
                .ok_or_else(|| invalid(format!("flip_profile `{l}` is not a configured profile")));
        }
        self.profiles
            .iter()
            .find(|p| p.temperature == 0.0)
            .copied()
            .ok_or_else(|| invalid("no T=0 profile for flip analysis"))
    }

    /// The profile with the most samples at the significance temperature.
    pub fn significance_profile(&self) -> Option<TemperatureProfile> {
        self.profiles
            .iter()
            .filter(|p| p.temperature == self.analysis.significance_temperature)
            .max_by_key(|p| p.n_samples)
            .copied()
    }

    pub fn analysis_options(&self, temperature: f64) -> AnalysisOptions {
        AnalysisOptions {
            temperature,
            granularity: self.analysis.granularity,
            anomaly_policy: self.analysis.anomaly_policy,
        }
    }
}
