//! Flat little-endian f32 tensor archive with a JSON manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub byte_offset: usize,
}

/// Serializes every parameter in store order.
pub fn encode(store: &ParamStore) -> (Vec<u8>, Vec<ManifestEntry>) {
    let mut bytes = Vec::with_capacity(store.scalar_count() * 4);
    let mut manifest = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        manifest.push(ManifestEntry { name: name.to_string(), shape: [t.rows, t.cols], dtype: "f32".into(), byte_offset: bytes.len() });
        for &x in &t.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    (bytes, manifest)
}

pub fn save(dir: &Path, store: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (bytes, manifest) = encode(store);
    std::fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads tensors as `(name, tensor)` pairs in manifest order.
pub fn load(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = std::fs::read(dir.join(WEIGHTS_FILE))?;
    decode(&bytes, &manifest)
}

pub fn decode(bytes: &[u8], manifest: &[ManifestEntry]) -> Result<Vec<(String, Tensor)>> {
    manifest
        .iter()
        .map(|e| {
            if e.dtype != "f32" {
                return Err(Error::Data(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let len = e.shape[0] * e.shape[1];
            let end = e.byte_offset + 4 * len;
            let raw = bytes.get(e.byte_offset..end).ok_or_else(|| Error::Data(format!("{}: archive truncated", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            Ok((e.name.clone(), Tensor::from_vec(e.shape[0], e.shape[1], data)?))
        })
        .collect()
}

/// Overwrites parameters in `store` with the archived values. Every store
/// entry must be present with a matching shape.
pub fn restore(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for (name, t) in tensors {
        let id = store.find(&name).ok_or_else(|| Error::Data(format!("unexpected tensor {name}")))?;
        if store.get(id).shape() != t.shape() {
            return Err(Error::Shape(format!("{name}: archive {:?} vs model {:?}", t.shape(), store.get(id).shape())));
        }
        *store.get_mut(id) = t;
        seen[id] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("archive lacks {}", store.name(missing))));
    }
    Ok(())
}
