use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::operators::fnv1a_64;
use super::MutatorError;
use crate::container::{ContainerHeader, ContainerKind, TensorContainer};

/// Token embeddings keyed by token id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<u32>,
    surfaces: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    row_of: HashMap<u32, usize>,
}

/// JSON sidecar naming the surface of every row of an embeddings
/// container; `null` marks ids that are not part of the table.
#[derive(Debug, Serialize, Deserialize)]
struct VocabSidecar {
    surfaces: Vec<Option<String>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(u32, String, Vec<f32>)>) -> Result<Self, MutatorError> {
        if dim == 0 {
            return Err(MutatorError::InvalidTable("zero dimension".into()));
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.0);
        let mut table = Self {
            dim,
            ids: Vec::with_capacity(entries.len()),
            surfaces: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len() * dim),
            norms: Vec::with_capacity(entries.len()),
            row_of: HashMap::with_capacity(entries.len()),
        };
        for (id, surface, v) in entries {
            if v.len() != dim {
                return Err(MutatorError::InvalidTable(format!(
                    "id {id} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if table.row_of.insert(id, table.ids.len()).is_some() {
                return Err(MutatorError::InvalidTable(format!("duplicate id {id}")));
            }
            table.norms.push(norm(&v));
            table.ids.push(id);
            table.surfaces.push(surface);
            table.vectors.extend(v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.row_of.contains_key(&id)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.row_of.get(&id).map(|&r| self.surfaces[r].as_str())
    }

    pub fn vector(&self, id: u32) -> Option<&[f32]> {
        self.row_of.get(&id).map(|&r| self.row(r))
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.vectors[r * self.dim..(r + 1) * self.dim]
    }

    /// Cosine similarity; `None` when either vector is all zeros.
    pub fn cosine(&self, a: u32, b: u32) -> Option<f64> {
        let ra = *self.row_of.get(&a)?;
        let rb = *self.row_of.get(&b)?;
        self.cosine_rows(ra, rb)
    }

    fn cosine_rows(&self, ra: usize, rb: usize) -> Option<f64> {
        let denom = self.norms[ra] * self.norms[rb];
        if denom == 0.0 {
            return None;
        }
        Some(dot(self.row(ra), self.row(rb)) / denom)
    }

    /// The `k` ids most cosine-similar to `id`, self excluded, ties broken
    /// by ascending id. Rows with a zero vector are never returned.
    pub fn top_k_similar(&self, id: u32, k: usize) -> Result<Vec<u32>, MutatorError> {
        let q = *self.row_of.get(&id).ok_or(MutatorError::UnknownToken(id))?;
        if k == 0 || self.norms[q] == 0.0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, u32)> = (0..self.ids.len())
            .filter(|&r| r != q)
            .filter_map(|r| self.cosine_rows(q, r).map(|s| (s, self.ids[r])))
            .collect();
        let order = |a: &(f64, u32), b: &(f64, u32)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored.into_iter().map(|(_, id)| id).collect())
    }

    /// Reads an embeddings container and its vocabulary sidecar.
    pub fn load(container: &Path, vocab: &Path) -> Result<Self, MutatorError> {
        let c = TensorContainer::read(container)?;
        if c.header.kind != ContainerKind::Embeddings {
            return Err(MutatorError::InvalidTable(format!(
                "{} is not an embeddings container",
                container.display()
            )));
        }
        let raw = fs::read_to_string(vocab).map_err(|source| MutatorError::Io {
            path: vocab.to_path_buf(),
            source,
        })?;
        let sidecar: VocabSidecar = serde_json::from_str(&raw).map_err(|e| MutatorError::MalformedFile {
            path: vocab.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let rows = c.header.rows().unwrap_or(0);
        if sidecar.surfaces.len() != rows {
            return Err(MutatorError::InvalidTable(format!(
                "vocab sidecar has {} entries, container has {rows} rows",
                sidecar.surfaces.len()
            )));
        }
        let entries = sidecar
            .surfaces
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i as u32, s, c.row(i).to_vec())))
            .collect();
        Self::new(c.header.hidden_dim, entries)
    }

    pub fn save(&self, container: &Path, vocab: &Path) -> Result<(), MutatorError> {
        let rows = self.ids.last().map_or(0, |&m| m as usize + 1);
        let mut data = vec![0.0f32; rows * self.dim];
        let mut surfaces = vec![None; rows];
        for (r, &id) in self.ids.iter().enumerate() {
            let i = id as usize;
            data[i * self.dim..(i + 1) * self.dim].copy_from_slice(self.row(r));
            surfaces[i] = Some(self.surfaces[r].clone());
        }
        TensorContainer::new(ContainerHeader::embeddings(rows, self.dim), data).write(container)?;
        let json = serde_json::to_string(&VocabSidecar { surfaces }).expect("sidecar serializes");
        fs::write(vocab, json).map_err(|source| MutatorError::Io {
            path: vocab.to_path_buf(),
            source,
        })
    }

    /// Deterministic embeddings for demo vocabularies: each surface is the
    /// bag of its hashed character trigrams (with `^`/`$` padding), so
    /// lexically similar tokens are near neighbours.
    pub fn from_char_trigrams(vocab: &[(u32, String)], dim: usize) -> Result<Self, MutatorError> {
        let entries = vocab
            .iter()
            .map(|(id, surface)| {
                let mut v = vec![0.0f32; dim];
                let padded: Vec<char> = std::iter::once('^')
                    .chain(surface.chars())
                    .chain(std::iter::once('$'))
                    .collect();
                for w in padded.windows(3.min(padded.len())) {
                    let gram: String = w.iter().collect();
                    v[(fnv1a_64(gram.as_bytes()) % dim as u64) as usize] += 1.0;
                }
                (*id, surface.clone(), v)
            })
            .collect();
        Self::new(dim, entries)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmbeddingTable {
        EmbeddingTable::new(
            2,
            vec![
                (0, "a".into(), vec![1.0, 0.0]),
                (1, "b".into(), vec![0.9, 0.1]),
                (2, "c".into(), vec![0.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn nearest_by_cosine() {
        let t = toy();
        assert_eq!(t.top_k_similar(0, 1).unwrap(), vec![1]);
        assert!((t.cosine(0, 1).unwrap() - 0.9 / 0.82f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn exhausted_vocabulary() {
        assert_eq!(toy().top_k_similar(0, 5).unwrap(), vec![1, 2]);
    }

    #[test]
    fn never_returns_query() {
        let t = toy();
        for id in 0..3 {
            assert!(!t.top_k_similar(id, 10).unwrap().contains(&id));
        }
    }

    #[test]
    fn ties_by_ascending_id() {
        let t = EmbeddingTable::new(
            2,
            vec![
                (5, "q".into(), vec![1.0, 0.0]),
                (9, "x".into(), vec![2.0, 0.0]),
                (3, "y".into(), vec![3.0, 0.0]),
                (7, "z".into(), vec![0.5, 0.0]),
            ],
        )
        .unwrap();
        assert_eq!(t.top_k_similar(5, 2).unwrap(), vec![3, 7]);
    }

    #[test]
    fn zero_vectors_excluded() {
        let t = EmbeddingTable::new(
            2,
            vec![(0, "a".into(), vec![1.0, 0.0]), (1, "z".into(), vec![0.0, 0.0])],
        )
        .unwrap();
        assert!(t.top_k_similar(0, 3).unwrap().is_empty());
        assert!(t.top_k_similar(1, 3).unwrap().is_empty());
    }

    #[test]
    fn unknown_token() {
        assert!(matches!(toy().top_k_similar(42, 1), Err(MutatorError::UnknownToken(42))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(EmbeddingTable::new(2, vec![(0, "a".into(), vec![1.0])]).is_err());
    }

    #[test]
    fn save_load_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let t = EmbeddingTable::new(
            2,
            vec![(0, "a".into(), vec![1.0, 0.0]), (3, "d".into(), vec![0.5, 0.25])],
        )
        .unwrap();
        let (c, v) = (dir.path().join("e.actv"), dir.path().join("vocab.json"));
        t.save(&c, &v).unwrap();
        let back = EmbeddingTable::load(&c, &v).unwrap();
        assert_eq!(back.ids(), &[0, 3]);
        assert!(!back.contains(1));
        assert_eq!(back.vector(3).unwrap(), &[0.5, 0.25]);
        assert_eq!(back.surface(3), Some("d"));
    }

    #[test]
    fn trigram_table_groups_similar_words() {
        let vocab: Vec<(u32, String)> = ["path", "paths", "zebra", "dest_path"]
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.to_string()))
            .collect();
        let t = EmbeddingTable::from_char_trigrams(&vocab, 64).unwrap();
        assert_eq!(t.top_k_similar(0, 1).unwrap(), vec![1]);
    }
}
