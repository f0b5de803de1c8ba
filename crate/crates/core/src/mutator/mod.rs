//! Seeded, enumerable prompt mutations.
//!
//! Three operators act on one token of the stored prompt body: replace one
//! character with a different ASCII letter, replace three distinct
//! characters of one token, or swap the whole token for one of its nearest
//! neighbours in embedding space. Every draw is a pure function of a seed
//! derived from `(task_id, kind, token_index, variant_index)`.

mod embedding;
mod operators;
mod plan;
mod tokenization;

pub use embedding::EmbeddingTable;
pub use operators::{
    derive_seed, eligible_positions, fnv1a_64, mutate_single_char, mutate_three_char,
    mutate_token_replace, AppliedMutation, ASCII_LETTERS,
};
pub use plan::{build_plan, read_mutations, write_mutations, MutationPlan, PlanConfig};
pub use tokenization::{
    load_tokenizations, write_tokenizations, Token, TokenizationRecord, TokenizationView,
    WhitespaceTokenizer,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MutatorError {
    #[error("TokenReplace requires an embedding table")]
    TableRequired,
    #[error("token {token_index} is not eligible for {kind}")]
    IneligibleToken { token_index: usize, kind: MutationKind },
    #[error("token id {0} has no usable neighbours")]
    EmptyNeighborhood(u32),
    #[error("token id {0} is not in the embedding table")]
    UnknownToken(u32),
    #[error("invalid tokenization for `{task_id}`: {reason}")]
    InvalidTokenization { task_id: String, reason: String },
    #[error("invalid embedding table: {0}")]
    InvalidTable(String),
    #[error("{path}: line {line}: {reason}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MutationKind {
    SingleChar,
    ThreeChar,
    TokenReplace,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [Self::SingleChar, Self::ThreeChar, Self::TokenReplace];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SingleChar => "SingleChar",
            Self::ThreeChar => "ThreeChar",
            Self::TokenReplace => "TokenReplace",
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MutationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown mutation kind `{s}`"))
    }
}

/// Identifies one mutated prompt within a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MutationKey {
    pub kind: MutationKind,
    pub token_index: usize,
    pub variant_index: u32,
}

impl fmt::Display for MutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.token_index, self.variant_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub task_id: String,
    pub kind: MutationKind,
    pub token_index: usize,
    pub variant_index: u32,
    pub seed: u64,
    /// Tokens in the original prompt.
    pub token_count: usize,
    /// Byte span of the mutated token in the original prompt.
    pub byte_span: [usize; 2],
    pub original_surface: String,
    pub mutated_surface: String,
    pub mutated_prompt: String,
    /// Character offsets inside the token that were rewritten.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub char_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_token_id: Option<u32>,
    /// Earlier variant of the same (position, kind) with an identical prompt.
    #[serde(default)]
    pub duplicate_of: Option<u32>,
}

impl MutationRecord {
    pub fn key(&self) -> MutationKey {
        MutationKey {
            kind: self.kind,
            token_index: self.token_index,
            variant_index: self.variant_index,
        }
    }

    /// The original prompt, rebuilt by putting the original surface back.
    pub fn restore(&self) -> String {
        let start = self.byte_span[0];
        let end_mutated = start + self.mutated_surface.len();
        let mut s = String::with_capacity(self.mutated_prompt.len());
        s.push_str(&self.mutated_prompt[..start]);
        s.push_str(&self.original_surface);
        s.push_str(&self.mutated_prompt[end_mutated..]);
        s
    }
}
