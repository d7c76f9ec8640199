//! `.nnw` weight files: magic, manifest length, JSON manifest, f32 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{NamedTensors, NetworkModel};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"NNW1\0\0\0\0";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    fingerprint: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset into the blob.
    offset: usize,
}

pub fn weights_to_bytes(model: &NetworkModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (name, t) in model.weights() {
        tensors.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest { version: MANIFEST_VERSION, fingerprint: model.fingerprint(), tensors };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + json.len() + blob.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

/// Loads weights into `model`, whose graph must match the saved one.
pub fn weights_from_bytes(model: &mut NetworkModel, bytes: &[u8]) -> Result<()> {
    let err = |m: String| Error::WeightsFile(m);
    if bytes.len() < 12 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(err("missing NNW1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| err("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| err(format!("bad manifest: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(err(format!("unknown manifest version {}", manifest.version)));
    }
    if manifest.fingerprint != model.fingerprint() {
        return Err(err(format!(
            "graph fingerprint mismatch: file {}, model {}",
            manifest.fingerprint,
            model.fingerprint()
        )));
    }
    let blob = &bytes[12 + len..];
    let mut store = NamedTensors::new();
    let mut expected_end = 0;
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(err(format!("unsupported dtype {} for {}", e.dtype, e.name)));
        }
        let count: usize = e.shape.iter().product();
        let end = e.offset + 4 * count;
        let raw = blob.get(e.offset..end).ok_or_else(|| err(format!("truncated blob at tensor {}", e.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        expected_end = expected_end.max(end);
    }
    if blob.len() != expected_end {
        return Err(err(format!("blob holds {} bytes, manifest describes {expected_end}", blob.len())));
    }
    model.set_weights(store).map_err(|e| err(format!("manifest does not match the model: {e}")))
}

pub fn save_weights(model: &NetworkModel, path: &Path) -> Result<()> {
    fs::write(path, weights_to_bytes(model))?;
    Ok(())
}

pub fn load_weights(model: &mut NetworkModel, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    weights_from_bytes(model, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{GraphSpec, InputSpec, NodeSpec};
    use crate::nn::layers::{Activation, LayerSpec};

    fn model(units: usize, seed: u64) -> NetworkModel {
        let spec = GraphSpec {
            inputs: vec![InputSpec { name: "x".into(), shape: vec![5, 2] }],
            nodes: vec![
                NodeSpec {
                    name: "lstm".into(),
                    layer: LayerSpec::Lstm { units, return_sequences: false },
                    inputs: vec!["x".into()],
                },
                NodeSpec {
                    name: "out".into(),
                    layer: LayerSpec::Dense { units: 1, activation: Activation::Linear },
                    inputs: vec!["lstm".into()],
                },
            ],
            output: "out".into(),
        };
        NetworkModel::new(spec, seed).unwrap()
    }

    fn batch() -> NamedTensors {
        let mut n = NamedTensors::new();
        n.insert("x".into(), Tensor::new(vec![3, 5, 2], (0..30).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        n
    }

    #[test]
    fn round_trip_is_byte_and_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = model(4, 1);
        let p1 = dir.path().join("a.nnw");
        save_weights(&a, &p1).unwrap();
        let mut b = model(4, 99);
        load_weights(&mut b, &p1).unwrap();
        let p2 = dir.path().join("b.nnw");
        save_weights(&b, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(a.predict(&batch()).unwrap(), b.predict(&batch()).unwrap());
        assert_eq!(&fs::read(&p1).unwrap()[..8], WEIGHTS_MAGIC);
    }

    #[test]
    fn different_sizes_rejected() {
        let bytes = weights_to_bytes(&model(4, 1));
        let err = weights_from_bytes(&mut model(5, 1), &bytes).unwrap_err();
        assert!(err.to_string().contains("fingerprint"), "{err}");
    }

    #[test]
    fn truncated_and_versioned_files_rejected() {
        let m = model(3, 2);
        let bytes = weights_to_bytes(&m);
        assert!(weights_from_bytes(&mut m.clone(), &bytes[..bytes.len() - 3]).is_err());
        let key = b"\"version\":1";
        let start = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut altered = bytes.clone();
        altered[start + key.len() - 1] = b'7';
        let err = weights_from_bytes(&mut m.clone(), &altered).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
