use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use super::ModelConfig;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter tensors, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Mat<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    /// Registers a zero tensor.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.names.push(name.into());
        self.tensors.push(Mat::zeros(rows, cols));
        self.tensors.len() - 1
    }

    /// Registers a tensor with uniform Glorot initialization.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> usize {
        let idx = self.add(name, rows, cols);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        for v in &mut self.tensors[idx].data {
            *v = S::of(rng.gen_range(-limit..limit));
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensors(&self) -> &[Mat<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat<S>] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Mat<S> {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Mat<S> {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().position(|t| !t.all_finite()) {
            Some(i) => Err(Error::Numeric(format!("parameter `{}` is not finite", self.names[i]))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

/// JSON side of a checkpoint; tensors live in a separate f32 blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<S: Scalar>(
    params: &ParamStore<S>,
    config: &ModelConfig,
    seed: u64,
) -> (CheckpointManifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(params.num_weights() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: [t.rows, t.cols],
            offset: blob.len(),
        });
        for v in &t.data {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        seed,
        tensors,
    };
    (manifest, blob)
}

/// Fills `params` (already laid out for the manifest's config) from a blob.
pub fn decode_checkpoint<S: Scalar>(
    manifest: &CheckpointManifest,
    blob: &[u8],
    params: &mut ParamStore<S>,
) -> Result<()> {
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedFormat(format!("checkpoint version {}", manifest.version)));
    }
    if manifest.tensors.len() != params.len() {
        return Err(Error::shape(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    for (entry, (name, t)) in manifest.tensors.iter().zip(params.names.iter().zip(&mut params.tensors)) {
        if &entry.name != name || entry.shape != [t.rows, t.cols] {
            return Err(Error::shape(format!(
                "checkpoint tensor `{}` {:?} does not match `{name}` [{}, {}]",
                entry.name, entry.shape, t.rows, t.cols
            )));
        }
        let end = entry.offset + 4 * t.len();
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::parse(0, format!("blob truncated in `{name}`")))?;
        for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
    }
    params.check_finite()
}

pub fn manifest_path(dir: &Path) -> std::path::PathBuf {
    dir.join("model.json")
}

pub fn blob_path(dir: &Path) -> std::path::PathBuf {
    dir.join("model.bin")
}
