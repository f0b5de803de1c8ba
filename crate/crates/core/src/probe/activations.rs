use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::ProbeError;
use crate::container::{ContainerKind, TensorContainer};

/// Per-prompt activation containers of one model, indexed by the
/// `prompt_key` in each header. Row 0 holds the embedding output and row
/// `L` the output of transformer block `L`, so `layer_count - 1` blocks.
/// Vectors are read lazily, one layer at a time.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    dir: PathBuf,
    layer_count: usize,
    hidden_dim: usize,
    index: BTreeMap<String, PathBuf>,
}

pub fn activation_file_name(prompt_key: &str) -> String {
    let safe: String = prompt_key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.actv")
}

impl ActivationStore {
    pub fn open(dir: &Path) -> Result<Self, ProbeError> {
        let inconsistent = |reason: String| ProbeError::InconsistentActivations {
            path: dir.to_path_buf(),
            reason,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|source| ProbeError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "actv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(inconsistent("no .actv files".into()));
        }

        let mut dims = None;
        let mut index = BTreeMap::new();
        for f in files {
            let (h, _) = TensorContainer::read_header(&f)?;
            if h.kind != ContainerKind::Activations {
                return Err(inconsistent(format!("{} is not an activation container", f.display())));
            }
            let key = h
                .prompt_key
                .clone()
                .ok_or_else(|| inconsistent(format!("{} has no prompt_key", f.display())))?;
            match dims {
                None => dims = Some((h.layer_count, h.hidden_dim)),
                Some(d) if d != (h.layer_count, h.hidden_dim) => {
                    return Err(inconsistent(format!(
                        "{} has {}x{}, expected {}x{}",
                        f.display(),
                        h.layer_count,
                        h.hidden_dim,
                        d.0,
                        d.1
                    )))
                }
                _ => {}
            }
            if index.insert(key.clone(), f).is_some() {
                return Err(inconsistent(format!("prompt_key `{key}` appears twice")));
            }
        }
        let (layer_count, hidden_dim) = dims.expect("at least one file");
        Ok(Self {
            dir: dir.to_path_buf(),
            layer_count,
            hidden_dim,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    /// Transformer blocks, excluding the embedding row.
    pub fn n_blocks(&self) -> usize {
        self.layer_count.saturating_sub(1)
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, prompt_key: &str) -> bool {
        self.index.contains_key(prompt_key)
    }

    /// The `layer` row for each key, in order.
    pub fn load_layer(&self, layer: usize, keys: &[String]) -> Result<Vec<Vec<f32>>, ProbeError> {
        if layer >= self.layer_count {
            return Err(ProbeError::InvalidParameter(format!(
                "layer {layer} outside [0, {})",
                self.layer_count
            )));
        }
        keys.iter()
            .map(|k| {
                let path = self.index.get(k).ok_or_else(|| ProbeError::MissingActivation(k.clone()))?;
                Ok(TensorContainer::read_row(path, layer)?.1)
            })
            .collect()
    }
}

/// `count` layers evenly spaced over `(0, n_blocks]`, final block included,
/// rounded half up and deduplicated.
pub fn layer_grid(n_blocks: usize, count: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (1..=count)
        .map(|i| (2 * n_blocks * i + count) / (2 * count))
        .filter(|&l| l >= 1)
        .collect();
    v.dedup();
    v
}

pub fn relative_depth(layer: usize, n_blocks: usize) -> f64 {
    layer as f64 / n_blocks.max(1) as f64
}
