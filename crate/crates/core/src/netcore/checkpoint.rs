//! Checkpoints: a JSON manifest naming every tensor with its shape and
//! element offset into a little-endian f32 blob stored next to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::params::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub arch: ArchSpec,
    pub seed: u64,
    pub stage: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// In-memory checkpoint: named tensors plus the manifest fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub seed: u64,
    pub stage: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(arch: ArchSpec, seed: u64, stage: impl Into<String>) -> Self {
        Self { arch, seed, stage: stage.into(), metadata: serde_json::Value::Null, tensors: Vec::new() }
    }

    /// Adds every tensor of `params` under `prefix.`.
    pub fn insert_params(&mut self, prefix: &str, params: &ModelParams<f32>) {
        for (spec, t) in params.specs.iter().zip(&params.tensors) {
            self.tensors.push((format!("{prefix}.{}", spec.name), spec.shape.clone(), t.clone()));
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.tensors.iter().any(|(n, _, _)| n.starts_with(&p))
    }

    /// Fills `into` (whose layout defines the expected names and shapes)
    /// from tensors stored under `prefix.`.
    pub fn extract_params(&self, prefix: &str, into: &mut ModelParams<f32>) -> Result<()> {
        for (spec, t) in into.specs.iter().zip(into.tensors.iter_mut()) {
            let name = format!("{prefix}.{}", spec.name);
            let (_, shape, data) = self
                .tensors
                .iter()
                .find(|(n, _, _)| *n == name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {name}")))?;
            if *shape != spec.shape {
                return Err(Error::Shape(format!("tensor {name} has shape {shape:?}, expected {:?}", spec.shape)));
            }
            t.clone_from(data);
        }
        Ok(())
    }
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf, String) {
    let blob = format!("{name}.bin");
    (dir.join(format!("{name}.json")), dir.join(&blob), blob)
}

pub fn save_checkpoint(dir: impl AsRef<Path>, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (manifest_path, blob_path, blob) = paths(dir, name);
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (tensor_name, shape, data) in &ckpt.tensors {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("tensor {tensor_name} data does not match shape {shape:?}")));
        }
        entries.push(TensorEntry { name: tensor_name.clone(), shape: shape.clone(), offset });
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += data.len();
    }
    let manifest = CheckpointManifest {
        format: "corrector-checkpoint-v1".into(),
        arch: ckpt.arch,
        seed: ckpt.seed,
        stage: ckpt.stage.clone(),
        blob,
        tensors: entries,
        metadata: ckpt.metadata.clone(),
    };
    fs::write(&blob_path, &bytes)?;
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest_path)
}

/// Loads `<dir>/<name>.json` (or a manifest path directly when `name` is empty).
pub fn load_checkpoint(dir: impl AsRef<Path>, name: &str) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = if name.is_empty() { dir.to_path_buf() } else { paths(dir, name).0 };
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(base.join(&manifest.blob))?;
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        let data = floats
            .get(e.offset..e.offset + len)
            .ok_or(Error::Truncated { expected: (e.offset + len) * 4, found: bytes.len() })?
            .to_vec();
        tensors.push((e.name.clone(), e.shape.clone(), data));
    }
    Ok(Checkpoint { arch: manifest.arch, seed: manifest.seed, stage: manifest.stage, metadata: manifest.metadata, tensors })
}
