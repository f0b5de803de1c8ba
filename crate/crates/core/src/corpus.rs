//! Benchmark task set: loading, validation and per-language summaries.
//!
//! A corpus is a `tasks.jsonl` file with one task object per line. Oracle
//! commands are stored as templates; the corpus never embeds test logic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: missing field `{field}`")]
    MissingField { field: &'static str, line: usize },
    #[error("line {line}: duplicate task_id `{task_id}`")]
    DuplicateTaskId { task_id: String, line: usize },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("no tokenization for task `{0}`")]
    MissingTokenization(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageId {
    C,
    Cpp,
    Go,
    Js,
    Py,
}

impl LanguageId {
    pub const ALL: [LanguageId; 5] = [Self::C, Self::Cpp, Self::Go, Self::Js, Self::Py];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::C => "c",
            Self::Cpp => "cpp",
            Self::Go => "go",
            Self::Js => "js",
            Self::Py => "py",
        }
    }

    /// Source file extension used when materialising a completion.
    pub fn file_extension(self) -> &'static str {
        match self {
            Self::C => "c",
            Self::Cpp => "cpp",
            Self::Go => "go",
            Self::Js => "js",
            Self::Py => "py",
        }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown language `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub language: LanguageId,
    pub cwe: String,
    pub prompt: String,
    /// Shell command template; may reference `{completion_file}` and `{workdir}`.
    pub functional_oracle: String,
    pub security_oracle: String,
    /// Optional text wrapped around the completion; `{completion}` marks
    /// where the completion is inserted.
    pub scaffold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    tasks: Vec<TaskSpec>,
    index: HashMap<String, usize>,
}

const REQUIRED_FIELDS: [&str; 6] = [
    "task_id",
    "language",
    "cwe",
    "prompt",
    "functional_oracle",
    "security_oracle",
];

impl Corpus {
    pub fn from_tasks(tasks: Vec<TaskSpec>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, task) in tasks.into_iter().enumerate() {
            corpus.push(task, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, task: TaskSpec, line: usize) -> Result<(), CorpusError> {
        if task.prompt.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: "empty prompt".into(),
            });
        }
        if task.functional_oracle.trim().is_empty() || task.security_oracle.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: "empty oracle command".into(),
            });
        }
        if self.index.contains_key(&task.task_id) {
            return Err(CorpusError::DuplicateTaskId {
                task_id: task.task_id,
                line,
            });
        }
        self.index.insert(task.task_id.clone(), self.tasks.len());
        self.tasks.push(task);
        Ok(())
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.index.get(task_id).map(|&i| &self.tasks[i])
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Number of distinct CWEs per language.
    pub fn cwe_counts(&self) -> BTreeMap<LanguageId, usize> {
        let mut sets: BTreeMap<LanguageId, BTreeSet<&str>> = BTreeMap::new();
        for t in &self.tasks {
            sets.entry(t.language).or_default().insert(&t.cwe);
        }
        sets.into_iter().map(|(l, s)| (l, s.len())).collect()
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<TaskSpec, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::MalformedRecord {
        line: line_no,
        reason: "record is not a JSON object".into(),
    })?;
    for field in REQUIRED_FIELDS {
        if obj.get(field).is_none_or(|v| v.is_null()) {
            return Err(CorpusError::MissingField {
                field,
                line: line_no,
            });
        }
    }
    serde_json::from_value(value).map_err(|e| CorpusError::MalformedRecord {
        line: line_no,
        reason: e.to_string(),
    })
}

/// Reads a `tasks.jsonl` file. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let task = parse_line(&line, i + 1)?;
        corpus.push(task, i + 1)?;
    }
    Ok(corpus)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for task in corpus.tasks() {
        let line = serde_json::to_string(task).expect("TaskSpec serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenStat {
    pub n_tasks: usize,
    pub raw_mean: f64,
    /// `raw_mean` rounded half-up to the nearest integer.
    pub display: u64,
}

pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Mean prompt length in tokens per language. `token_counts` maps task id
/// to the number of tokens in its prompt.
pub fn corpus_stats(
    corpus: &Corpus,
    token_counts: &HashMap<String, usize>,
) -> Result<BTreeMap<LanguageId, TokenStat>, CorpusError> {
    let mut sums: BTreeMap<LanguageId, (usize, usize)> = BTreeMap::new();
    for t in corpus.tasks() {
        let n = token_counts
            .get(&t.task_id)
            .ok_or_else(|| CorpusError::MissingTokenization(t.task_id.clone()))?;
        let e = sums.entry(t.language).or_default();
        e.0 += 1;
        e.1 += n;
    }
    Ok(sums
        .into_iter()
        .map(|(lang, (count, total))| {
            let raw_mean = total as f64 / count as f64;
            let stat = TokenStat {
                n_tasks: count,
                raw_mean,
                display: round_half_up(raw_mean) as u64,
            };
            (lang, stat)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, lang: LanguageId, cwe: &str) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            language: lang,
            cwe: cwe.into(),
            prompt: format!("write {id}"),
            functional_oracle: "exit 0".into(),
            security_oracle: "exit 0".into(),
            scaffold: None,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const GOOD: &str = r#"{"task_id":"CWE-078-0","language":"py","cwe":"CWE-078","prompt":"p","functional_oracle":"exit 0","security_oracle":"exit 0","scaffold":null}"#;

    #[test]
    fn loads_in_file_order() {
        let f = write_lines(&[
            GOOD,
            &GOOD.replace("CWE-078-0", "CWE-078-1"),
            &GOOD.replace("CWE-078-0", "CWE-022-0"),
        ]);
        let c = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = c.tasks().iter().map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids, ["CWE-078-0", "CWE-078-1", "CWE-022-0"]);
    }

    #[test]
    fn duplicate_task_id_rejected() {
        let f = write_lines(&[GOOD, GOOD]);
        match load_corpus(f.path()) {
            Err(CorpusError::DuplicateTaskId { task_id, line }) => {
                assert_eq!(task_id, "CWE-078-0");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let f = write_lines(&[GOOD, r#"{"task_id":"x","language":"c","cwe":"CWE-1","prompt":"p","functional_oracle":"exit 0"}"#]);
        match load_corpus(f.path()) {
            Err(CorpusError::MissingField { field, line }) => {
                assert_eq!(field, "security_oracle");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = write_lines(&[GOOD, "{not json", GOOD]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
        let f = write_lines(&[&GOOD.replace("\"py\"", "\"rust\"")]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn empty_prompt_rejected() {
        let f = write_lines(&[&GOOD.replace("\"prompt\":\"p\"", "\"prompt\":\"\"")]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn cwe_counts_are_distinct_per_language() {
        let c = Corpus::from_tasks(vec![
            task("CWE-078-0", LanguageId::Py, "CWE-078"),
            task("CWE-078-1", LanguageId::Py, "CWE-078"),
            task("CWE-022-0", LanguageId::Py, "CWE-022"),
            task("c-CWE-078-0", LanguageId::C, "CWE-078"),
        ])
        .unwrap();
        let counts = c.cwe_counts();
        assert_eq!(counts[&LanguageId::Py], 2);
        assert_eq!(counts[&LanguageId::C], 1);
    }

    #[test]
    fn stats_singleton_and_half_up() {
        let c = Corpus::from_tasks(vec![task("a", LanguageId::C, "CWE-1")]).unwrap();
        let counts = HashMap::from([("a".to_string(), 7usize)]);
        let s = corpus_stats(&c, &counts).unwrap();
        assert_eq!(s[&LanguageId::C].display, 7);

        let c = Corpus::from_tasks(vec![
            task("a", LanguageId::C, "CWE-1"),
            task("b", LanguageId::C, "CWE-2"),
        ])
        .unwrap();
        let counts = HashMap::from([("a".to_string(), 10usize), ("b".to_string(), 11)]);
        let s = corpus_stats(&c, &counts).unwrap();
        assert_eq!(s[&LanguageId::C].raw_mean, 10.5);
        assert_eq!(s[&LanguageId::C].display, 11);
    }

    #[test]
    fn stats_require_every_tokenization() {
        let c = Corpus::from_tasks(vec![task("a", LanguageId::C, "CWE-1")]).unwrap();
        assert!(matches!(
            corpus_stats(&c, &HashMap::new()),
            Err(CorpusError::MissingTokenization(id)) if id == "a"
        ));
    }

    #[test]
    fn language_strings() {
        assert_eq!(serde_json::to_string(&LanguageId::Cpp).unwrap(), "\"cpp\"");
        assert_eq!("js".parse::<LanguageId>().unwrap(), LanguageId::Js);
        assert!("rust".parse::<LanguageId>().is_err());
    }
}
