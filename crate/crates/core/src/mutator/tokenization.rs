use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MutatorError;
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl Token {
    pub fn char_count(&self) -> usize {
        self.surface.chars().count()
    }
}

/// A prompt and its tokens. Each token's surface is the exact text of its
/// byte span; bytes between spans belong to no token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizationView {
    pub task_id: String,
    pub prompt_text: String,
    pub tokens: Vec<Token>,
}

impl TokenizationView {
    pub fn new(
        task_id: impl Into<String>,
        prompt_text: impl Into<String>,
        tokens: Vec<Token>,
    ) -> Result<Self, MutatorError> {
        let view = Self {
            task_id: task_id.into(),
            prompt_text: prompt_text.into(),
            tokens,
        };
        view.validate()?;
        Ok(view)
    }

    fn validate(&self) -> Result<(), MutatorError> {
        let bad = |reason: String| MutatorError::InvalidTokenization {
            task_id: self.task_id.clone(),
            reason,
        };
        let mut prev_end = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.start > t.end || t.start < prev_end || t.end > self.prompt_text.len() {
                return Err(bad(format!("token {i} span [{}, {}) out of order", t.start, t.end)));
            }
            let slice = self
                .prompt_text
                .get(t.start..t.end)
                .ok_or_else(|| bad(format!("token {i} span splits a UTF-8 character")))?;
            if slice != t.surface {
                return Err(bad(format!(
                    "token {i} surface {:?} does not match prompt text {:?}",
                    t.surface, slice
                )));
            }
            prev_end = t.end;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenates surfaces and the unattributed gap bytes.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.prompt_text.len());
        let mut pos = 0;
        for t in &self.tokens {
            out.push_str(&self.prompt_text[pos..t.start]);
            out.push_str(&t.surface);
            pos = t.end;
        }
        out.push_str(&self.prompt_text[pos..]);
        out
    }

    pub fn to_record(&self) -> TokenizationRecord {
        TokenizationRecord {
            task_id: self.task_id.clone(),
            token_ids: self.tokens.iter().map(|t| t.id).collect(),
            spans: self.tokens.iter().map(|t| [t.start, t.end]).collect(),
            surfaces: self.tokens.iter().map(|t| t.surface.clone()).collect(),
        }
    }
}

/// One line of a tokenization file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizationRecord {
    pub task_id: String,
    pub token_ids: Vec<u32>,
    pub spans: Vec<[usize; 2]>,
    pub surfaces: Vec<String>,
}

impl TokenizationRecord {
    pub fn into_view(self, prompt_text: &str) -> Result<TokenizationView, MutatorError> {
        if self.token_ids.len() != self.spans.len() || self.spans.len() != self.surfaces.len() {
            return Err(MutatorError::InvalidTokenization {
                task_id: self.task_id,
                reason: "token_ids, spans and surfaces differ in length".into(),
            });
        }
        let tokens = self
            .token_ids
            .into_iter()
            .zip(self.spans)
            .zip(self.surfaces)
            .map(|((id, [start, end]), surface)| Token {
                id,
                start,
                end,
                surface,
            })
            .collect();
        TokenizationView::new(self.task_id, prompt_text, tokens)
    }
}

/// Loads a tokenization file and checks every record against the corpus
/// prompt it claims to describe.
pub fn load_tokenizations(
    path: &Path,
    corpus: &Corpus,
) -> Result<BTreeMap<String, TokenizationView>, MutatorError> {
    let io_err = |source| MutatorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let malformed = |line: usize, reason: String| MutatorError::MalformedFile {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenizationRecord =
            serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        let task = corpus
            .get(&rec.task_id)
            .ok_or_else(|| malformed(i + 1, format!("unknown task `{}`", rec.task_id)))?;
        let view = rec.into_view(&task.prompt)?;
        out.insert(view.task_id.clone(), view);
    }
    Ok(out)
}

pub fn write_tokenizations<'a>(
    path: &Path,
    views: impl IntoIterator<Item = &'a TokenizationView>,
) -> Result<(), MutatorError> {
    let io_err = |source| MutatorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for v in views {
        let line = serde_json::to_string(&v.to_record()).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Test and demo tokenizer: tokens are maximal runs of non-whitespace.
/// Ids index the sorted vocabulary seen at fit time; unseen words get the
/// out-of-vocabulary id `vocab_size`.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer {
    vocab: BTreeMap<String, u32>,
}

impl WhitespaceTokenizer {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        let vocab = words
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), i as u32))
            .collect();
        Self { vocab }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn oov_id(&self) -> u32 {
        self.vocab.len() as u32
    }

    /// `(id, surface)` pairs in id order.
    pub fn vocab(&self) -> Vec<(u32, String)> {
        let mut v: Vec<_> = self.vocab.iter().map(|(w, &id)| (id, w.clone())).collect();
        v.sort();
        v
    }

    pub fn tokenize(&self, task_id: &str, text: &str) -> TokenizationView {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
            match (start, ch.is_whitespace()) {
                (None, false) => start = Some(i),
                (Some(s), true) => {
                    let surface = &text[s..i];
                    tokens.push(Token {
                        id: self.vocab.get(surface).copied().unwrap_or(self.oov_id()),
                        start: s,
                        end: i,
                        surface: surface.to_string(),
                    });
                    start = None;
                }
                _ => {}
            }
        }
        TokenizationView {
            task_id: task_id.to_string(),
            prompt_text: text.to_string(),
            tokens,
        }
    }
}
