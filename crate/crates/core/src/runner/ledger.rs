use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::endpoint::FinishReason;
use super::RunnerError;
use crate::corpus::{Corpus, LanguageId};
use crate::mutator::{read_mutations, MutationKey, MutationRecord};

/// Which prompt a generation answered: the task's original prompt or one
/// of its mutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptRef {
    Original,
    Mutation(MutationKey),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PromptRefRepr {
    Tag(String),
    Mutation(MutationKey),
}

impl Serialize for PromptRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PromptRef::Original => PromptRefRepr::Tag("original".into()).serialize(s),
            PromptRef::Mutation(k) => PromptRefRepr::Mutation(*k).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PromptRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match PromptRefRepr::deserialize(d)? {
            PromptRefRepr::Tag(t) if t == "original" => Ok(PromptRef::Original),
            PromptRefRepr::Tag(t) => Err(serde::de::Error::custom(format!("unknown prompt_ref `{t}`"))),
            PromptRefRepr::Mutation(k) => Ok(PromptRef::Mutation(k)),
        }
    }
}

impl PromptRef {
    /// Key naming this prompt in activation containers.
    pub fn prompt_key(&self, task_id: &str) -> String {
        match self {
            PromptRef::Original => task_id.to_string(),
            PromptRef::Mutation(k) => format!("{task_id}:{k}"),
        }
    }

    pub fn mutation(&self) -> Option<&MutationKey> {
        match self {
            PromptRef::Original => None,
            PromptRef::Mutation(k) => Some(k),
        }
    }
}

impl fmt::Display for PromptRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptRef::Original => f.write_str("original"),
            PromptRef::Mutation(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub model_id: String,
    pub task_id: String,
    pub prompt_ref: PromptRef,
    pub temperature: f64,
    pub n_samples: u32,
    pub max_new_tokens: u32,
    pub request_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub model_id: String,
    pub task_id: String,
    pub prompt_ref: PromptRef,
    pub temperature: f64,
    pub sample_index: u32,
    pub completion_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLogRefs {
    pub functional: String,
    pub security: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub model_id: String,
    pub task_id: String,
    pub language: LanguageId,
    pub cwe: String,
    pub temperature: f64,
    pub prompt_ref: PromptRef,
    pub sample_index: u32,
    pub functional: bool,
    pub secure: bool,
    pub label_func: bool,
    pub label_func_sec: bool,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub functional_timed_out: bool,
    #[serde(default)]
    pub security_timed_out: bool,
    pub oracle_logs: OracleLogRefs,
}

impl OutcomeRecord {
    /// Builds a record whose labels are derived from the two oracle bits.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model_id: &str,
        task_id: &str,
        language: LanguageId,
        cwe: &str,
        temperature: f64,
        prompt_ref: PromptRef,
        sample_index: u32,
        functional: bool,
        secure: bool,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            task_id: task_id.into(),
            language,
            cwe: cwe.into(),
            temperature,
            prompt_ref,
            sample_index,
            functional,
            secure,
            label_func: functional,
            label_func_sec: functional && secure,
            finish_reason: FinishReason::Stop,
            functional_timed_out: false,
            security_timed_out: false,
            oracle_logs: OracleLogRefs {
                functional: String::new(),
                security: String::new(),
            },
        }
    }

    pub fn labels_consistent(&self) -> bool {
        self.label_func == self.functional && self.label_func_sec == (self.functional && self.secure)
    }
}

/// Appends one JSON line per record and syncs the file.
pub fn append_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), RunnerError> {
    let io_err = |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("ledger record serializes"));
        buf.push('\n');
    }
    if buf.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
    f.write_all(buf.as_bytes()).map_err(io_err)?;
    f.sync_data().map_err(io_err)
}

/// Reads a JSONL file; a missing file is an empty ledger.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunnerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let io_err = |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunnerError::MalformedLedger {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// File layout of a ledger rooted at one directory:
/// `<root>/<model>/mutations.jsonl` and
/// `<root>/<model>/<profile>/{requests,generations,outcomes}.jsonl`.
#[derive(Debug, Clone)]
pub struct LedgerPaths {
    pub root: PathBuf,
}

impl LedgerPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn model_dir(&self, model_id: &str) -> PathBuf {
        self.root.join(sanitize(model_id))
    }

    pub fn mutations(&self, model_id: &str) -> PathBuf {
        self.model_dir(model_id).join("mutations.jsonl")
    }

    pub fn profile_dir(&self, model_id: &str, profile: &str) -> PathBuf {
        self.model_dir(model_id).join(profile)
    }

    pub fn requests(&self, model_id: &str, profile: &str) -> PathBuf {
        self.profile_dir(model_id, profile).join("requests.jsonl")
    }

    pub fn generations(&self, model_id: &str, profile: &str) -> PathBuf {
        self.profile_dir(model_id, profile).join("generations.jsonl")
    }

    pub fn outcomes(&self, model_id: &str, profile: &str) -> PathBuf {
        self.profile_dir(model_id, profile).join("outcomes.jsonl")
    }

    pub fn oracle_logs(&self, model_id: &str, profile: &str) -> PathBuf {
        self.profile_dir(model_id, profile).join("oracle_logs")
    }
}

/// Model ids may contain `/`; directory names may not.
pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// An in-memory snapshot of everything analysis and probing need.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    /// Per model: mutation records keyed by (task_id, key).
    pub mutations: BTreeMap<String, HashMap<(String, MutationKey), MutationRecord>>,
    pub outcomes: Vec<OutcomeRecord>,
}

impl Ledger {
    pub fn from_parts(
        mutations: impl IntoIterator<Item = (String, Vec<MutationRecord>)>,
        outcomes: Vec<OutcomeRecord>,
    ) -> Self {
        let mutations = mutations
            .into_iter()
            .map(|(model, recs)| {
                let map = recs
                    .into_iter()
                    .map(|r| ((r.task_id.clone(), r.key()), r))
                    .collect();
                (model, map)
            })
            .collect();
        Self { mutations, outcomes }
    }

    /// Loads every model and profile under `root`.
    pub fn load(root: &Path) -> Result<Self, RunnerError> {
        let io_err = |source| RunnerError::Io {
            path: root.to_path_buf(),
            source,
        };
        let mut model_dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        model_dirs.sort();

        let mut parts = Vec::new();
        let mut outcomes = Vec::new();
        for dir in model_dirs {
            let mpath = dir.join("mutations.jsonl");
            let records = if mpath.exists() { read_mutations(&mpath)? } else { Vec::new() };
            let mut profiles: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io_err)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            profiles.sort();
            let mut model_id = None;
            for p in profiles {
                let recs: Vec<OutcomeRecord> = read_jsonl(&p.join("outcomes.jsonl"))?;
                if let Some(first) = recs.first() {
                    model_id = Some(first.model_id.clone());
                }
                outcomes.extend(recs);
            }
            let model_id = model_id.unwrap_or_else(|| {
                dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            parts.push((model_id, records));
        }
        Ok(Self::from_parts(parts, outcomes))
    }

    pub fn mutation(&self, model_id: &str, task_id: &str, key: &MutationKey) -> Option<&MutationRecord> {
        self.mutations.get(model_id)?.get(&(task_id.to_string(), *key))
    }

    /// Every outcome must resolve to exactly one prompt: an original task
    /// in the corpus, or a mutation record of the same model.
    pub fn validate(&self, corpus: Option<&Corpus>) -> Result<(), RunnerError> {
        let mut seen = HashSet::new();
        for o in &self.outcomes {
            if !o.labels_consistent() {
                return Err(RunnerError::Inconsistent(format!(
                    "labels of {} {} {} disagree with oracle bits",
                    o.model_id, o.task_id, o.prompt_ref
                )));
            }
            if let Some(c) = corpus {
                if c.get(&o.task_id).is_none() {
                    return Err(RunnerError::Inconsistent(format!("unknown task `{}`", o.task_id)));
                }
            }
            if let PromptRef::Mutation(k) = &o.prompt_ref {
                if self.mutation(&o.model_id, &o.task_id, k).is_none() {
                    return Err(RunnerError::Inconsistent(format!(
                        "outcome for {} {} {k} has no mutation record",
                        o.model_id, o.task_id
                    )));
                }
            }
            let key = (
                o.model_id.clone(),
                o.task_id.clone(),
                o.prompt_ref,
                o.temperature.to_bits(),
                o.sample_index,
            );
            if !seen.insert(key) {
                return Err(RunnerError::Inconsistent(format!(
                    "duplicate outcome {} {} {} sample {}",
                    o.model_id, o.task_id, o.prompt_ref, o.sample_index
                )));
            }
        }
        Ok(())
    }
}
