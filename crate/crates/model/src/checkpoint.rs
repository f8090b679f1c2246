//! Single-file model container: `FRCK`, version, JSON manifest, then named
//! little-endian float32 arrays.

use std::path::Path;

use facrig_core::Real;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{ModelConfig, NfrModel};

const MAGIC: &[u8; 4] = b"FRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub architecture: ModelConfig,
    pub architecture_hash: String,
    /// 0 for an untrained model, otherwise the last completed training stage.
    pub stage: u8,
    pub dataset_seeds: Vec<u64>,
    #[serde(default)]
    pub metrics: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(config: &ModelConfig, stage: u8, dataset_seeds: Vec<u64>) -> Self {
        Self {
            architecture: config.clone(),
            architecture_hash: config.architecture_hash(),
            stage,
            dataset_seeds,
            metrics: None,
        }
    }
}

pub fn to_bytes<T: Real>(model: &NfrModel<T>, manifest: &Manifest) -> Result<Vec<u8>> {
    if manifest.architecture != model.config {
        return Err(ModelError::Checkpoint("manifest architecture differs from the model".into()));
    }
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let (r, c) = p.value.dim();
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for v in p.value.iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads the manifest without touching the arrays.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let mut r = Reader { bytes, at: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader) -> Result<Manifest> {
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = r.u64()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;
    if manifest.architecture.architecture_hash() != manifest.architecture_hash {
        return Err(ModelError::Checkpoint("architecture hash does not match the manifest".into()));
    }
    Ok(manifest)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(NfrModel<T>, Manifest)> {
    let mut r = Reader { bytes, at: 0 };
    let manifest = read_header(&mut r)?;
    let mut model = NfrModel::<T>::new(manifest.architecture.clone())?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {count} arrays, the architecture needs {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| ModelError::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let id = model
            .params
            .index_of(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown array {name:?}")))?;
        if model.params.value(id).dim() != (rows, cols) {
            return Err(ModelError::Checkpoint(format!("array {name:?} has shape {rows}x{cols}")));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(ModelError::Checkpoint(format!("array {name:?} appears twice")));
        }
        let data = r.take(rows * cols * 4)?;
        let values: Vec<T> = data
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        *model.params.value_mut(id) = Array2::from_shape_vec((rows, cols), values).unwrap();
    }
    if r.at != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after the last array".into()));
    }
    Ok((model, manifest))
}

pub fn save<T: Real>(path: impl AsRef<Path>, model: &NfrModel<T>, manifest: &Manifest) -> Result<()> {
    let bytes = to_bytes(model, manifest)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(NfrModel<T>, Manifest)> {
    from_bytes(&std::fs::read(path)?)
}
