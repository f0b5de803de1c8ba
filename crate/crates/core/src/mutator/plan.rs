use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::operators::{
    derive_seed, eligible_positions, mutate_single_char, mutate_three_char, replace_with_neighbour,
    AppliedMutation,
};
use super::{EmbeddingTable, MutationKind, MutationRecord, MutatorError, TokenizationView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub variants_per_kind: u32,
    /// Neighbourhood size for TokenReplace.
    pub k: usize,
    pub kinds: Vec<MutationKind>,
    pub skip_nonword_tokens: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            variants_per_kind: 6,
            k: 10,
            kinds: MutationKind::ALL.to_vec(),
            skip_nonword_tokens: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationPlan {
    pub task_id: String,
    /// Ascending by position, then kind, then variant.
    pub records: Vec<MutationRecord>,
}

impl MutationPlan {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Every eligible (position, kind) gets `variants_per_kind` records.
/// Variants that reproduce an earlier variant's prompt are kept and marked
/// with `duplicate_of`.
pub fn build_plan(
    view: &TokenizationView,
    table: Option<&EmbeddingTable>,
    config: &PlanConfig,
) -> Result<MutationPlan, MutatorError> {
    let mut kinds = config.kinds.clone();
    kinds.sort();
    kinds.dedup();

    let mut eligible: HashMap<MutationKind, Vec<bool>> = HashMap::new();
    for &kind in &kinds {
        let mut mask = vec![false; view.len()];
        for i in eligible_positions(view, kind, table, config.skip_nonword_tokens)? {
            mask[i] = true;
        }
        eligible.insert(kind, mask);
    }

    let mut neighbour_cache: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut records = Vec::new();
    for i in 0..view.len() {
        for &kind in &kinds {
            if !eligible[&kind][i] {
                continue;
            }
            let mut seen: HashMap<String, u32> = HashMap::new();
            for variant in 0..config.variants_per_kind {
                let seed = derive_seed(&view.task_id, kind, i, variant);
                let applied = match kind {
                    MutationKind::SingleChar => mutate_single_char(view, i, seed)?,
                    MutationKind::ThreeChar => mutate_three_char(view, i, seed)?,
                    MutationKind::TokenReplace => {
                        let table = table.ok_or(MutatorError::TableRequired)?;
                        let id = view.tokens[i].id;
                        if !neighbour_cache.contains_key(&id) {
                            neighbour_cache.insert(id, table.top_k_similar(id, config.k)?);
                        }
                        replace_with_neighbour(view, i, table, seed, &neighbour_cache[&id])?
                    }
                };
                let duplicate_of = seen.get(&applied.mutated_prompt).copied();
                if duplicate_of.is_none() {
                    seen.insert(applied.mutated_prompt.clone(), variant);
                }
                records.push(into_record(view, variant, duplicate_of, applied));
            }
        }
    }
    Ok(MutationPlan {
        task_id: view.task_id.clone(),
        records,
    })
}

fn into_record(
    view: &TokenizationView,
    variant_index: u32,
    duplicate_of: Option<u32>,
    m: AppliedMutation,
) -> MutationRecord {
    MutationRecord {
        task_id: view.task_id.clone(),
        kind: m.kind,
        token_index: m.token_index,
        variant_index,
        seed: m.seed,
        token_count: view.len(),
        byte_span: m.byte_span,
        original_surface: m.original_surface,
        mutated_surface: m.mutated_surface,
        mutated_prompt: m.mutated_prompt,
        char_positions: m.char_positions,
        replacement_token_id: m.replacement_token_id,
        duplicate_of,
    }
}

pub fn write_mutations<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a MutationRecord>,
) -> Result<(), MutatorError> {
    let io_err = |source| MutatorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_mutations(path: &Path) -> Result<Vec<MutationRecord>, MutatorError> {
    let io_err = |source| MutatorError::Io {
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
        out.push(serde_json::from_str(&line).map_err(|e| MutatorError::MalformedFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
