use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::activations::activation_file_name;
use super::ProbeError;
use crate::container::{ContainerHeader, TensorContainer};
use crate::mutator::fnv1a_64;

/// Synthetic activations: standard normal noise everywhere except
/// coordinate 0 at `signal_layers`, where positives sit at
/// `margin/2 + |g|` and negatives at `-(margin/2 + |g|)`, so those layers
/// are linearly separable with the given margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_blocks: usize,
    pub hidden_dim: usize,
    pub signal_layers: Vec<usize>,
    pub margin: f64,
    pub seed: u64,
}

/// Writes one container per `(prompt_key, label)`; returns the count.
/// Each file depends only on the spec, its key and its label.
pub fn synthesize_activations(dir: &Path, items: &[(String, bool)], spec: &SynthSpec) -> Result<usize, ProbeError> {
    if spec.hidden_dim == 0 || spec.n_blocks == 0 {
        return Err(ProbeError::InvalidParameter("synthetic activations need n_blocks, hidden_dim > 0".into()));
    }
    if let Some(l) = spec.signal_layers.iter().find(|&&l| l > spec.n_blocks) {
        return Err(ProbeError::InvalidParameter(format!("signal layer {l} beyond {} blocks", spec.n_blocks)));
    }
    std::fs::create_dir_all(dir).map_err(|source| ProbeError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let layers = spec.n_blocks + 1;
    for (key, label) in items {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a_64(format!("{}|{key}", spec.seed).as_bytes()));
        let mut data = Vec::with_capacity(layers * spec.hidden_dim);
        for layer in 0..layers {
            for j in 0..spec.hidden_dim {
                let g: f64 = StandardNormal.sample(&mut rng);
                let v = if j == 0 && spec.signal_layers.contains(&layer) {
                    let s = spec.margin / 2.0 + g.abs();
                    if *label {
                        s
                    } else {
                        -s
                    }
                } else {
                    g
                };
                data.push(v as f32);
            }
        }
        TensorContainer::new(ContainerHeader::activations(key.clone(), layers, spec.hidden_dim), data)
            .write(&dir.join(activation_file_name(key)))?;
    }
    Ok(items.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ActivationStore;

    #[test]
    fn planted_layer_is_separable() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<(String, bool)> = (0..20).map(|i| (format!("k{i}"), i % 2 == 0)).collect();
        let spec = SynthSpec {
            n_blocks: 3,
            hidden_dim: 4,
            signal_layers: vec![2],
            margin: 1.0,
            seed: 7,
        };
        assert_eq!(synthesize_activations(dir.path(), &items, &spec).unwrap(), 20);
        let store = ActivationStore::open(dir.path()).unwrap();
        assert_eq!((store.layer_count(), store.hidden_dim()), (4, 4));
        let keys: Vec<String> = items.iter().map(|i| i.0.clone()).collect();
        let rows = store.load_layer(2, &keys).unwrap();
        for (r, (_, l)) in rows.iter().zip(&items) {
            assert_eq!(r[0] >= 0.5, *l);
            assert!(r[0].abs() >= 0.5);
        }
        // rewriting is byte-identical
        let before = std::fs::read(dir.path().join("k3.actv")).unwrap();
        synthesize_activations(dir.path(), &items[3..4], &spec).unwrap();
        assert_eq!(before, std::fs::read(dir.path().join("k3.actv")).unwrap());
    }

    #[test]
    fn rejects_layer_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_blocks: 3,
            hidden_dim: 4,
            signal_layers: vec![4],
            margin: 1.0,
            seed: 0,
        };
        assert!(synthesize_activations(dir.path(), &[], &spec).is_err());
    }
}
