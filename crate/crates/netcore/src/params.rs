use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

/// Named 2-D parameter tensors and their gradient accumulators.
///
/// Shapes are fixed once a parameter is added; `values` and `grads` always
/// have one same-length slot per parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n = rows * cols;
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
        };
        self.names.push(name.into());
        self.shapes.push((rows, cols));
        self.values.push(values);
        self.grads.push(vec![0.0; n]);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `scale * grads` into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (slot, g) in self.grads.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn manifest(&self, model_name: &str, hyperparams: serde_json::Value) -> Manifest {
        Manifest {
            model_name: model_name.to_string(),
            dtype: "f32-le".to_string(),
            shapes: self
                .names
                .iter()
                .zip(&self.shapes)
                .map(|(name, &(r, c))| TensorEntry {
                    name: name.clone(),
                    shape: [r, c],
                })
                .collect(),
            hyperparams,
        }
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f32
    /// values concatenated in manifest order).
    pub fn save(&self, stem: &Path, model_name: &str, hyperparams: serde_json::Value) -> Result<()> {
        let manifest = self.manifest(model_name, hyperparams);
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(manifest_path(stem), serde_json::to_vec_pretty(&manifest)?)?;
        let mut blob = Vec::with_capacity(self.num_scalars() * 4);
        for v in &self.values {
            for &x in v {
                blob.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        fs::write(blob_path(stem), blob)?;
        Ok(())
    }

    /// Overwrites parameter values from a checkpoint. Names and shapes must
    /// match this store exactly.
    pub fn load_values(&mut self, manifest: &Manifest, blob: &[u8]) -> Result<()> {
        if manifest.shapes.len() != self.names.len() {
            return Err(NetError::Checkpoint(format!(
                "{} tensors in checkpoint, model has {}",
                manifest.shapes.len(),
                self.names.len()
            )));
        }
        let mut offset = 0usize;
        for (i, entry) in manifest.shapes.iter().enumerate() {
            let (r, c) = self.shapes[i];
            if entry.name != self.names[i] || entry.shape != [r, c] {
                return Err(NetError::Checkpoint(format!(
                    "tensor {i}: checkpoint has {} {:?}, model has {} {:?}",
                    entry.name,
                    entry.shape,
                    self.names[i],
                    [r, c]
                )));
            }
            let n = r * c;
            let bytes = blob
                .get(offset * 4..(offset + n) * 4)
                .ok_or_else(|| NetError::Checkpoint("parameter blob is truncated".into()))?;
            for (dst, chunk) in self.values[i].iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
            offset += n;
        }
        if offset * 4 != blob.len() {
            return Err(NetError::Checkpoint("trailing bytes in parameter blob".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

/// Checkpoint header. The blob stores tensors in the order of `shapes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub dtype: String,
    pub shapes: Vec<TensorEntry>,
    pub hyperparams: serde_json::Value,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn read_checkpoint(stem: &Path) -> Result<(Manifest, Vec<u8>)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path(stem))?)?;
    let blob = fs::read(blob_path(stem))?;
    Ok((manifest, blob))
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn empty(n: usize) -> Self {
        Self { slots: vec![None; n] }
    }

    pub(crate) fn add(&mut self, id: ParamId, len: usize, g: &[f64]) {
        let slot = self.slots[id.0].get_or_insert_with(|| vec![0.0; len]);
        for (a, b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Gradient of `id`, or `None` when the loss did not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }
}
