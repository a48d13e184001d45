//! Flat little-endian f64 weights plus a JSON manifest.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::graph::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub config_hash: String,
    /// Model hyperparameters needed to rebuild the parameter layout.
    pub model_config: serde_json::Value,
    pub params: Vec<ManifestEntry>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("manifest.json"))
}

pub fn save(stem: &Path, ps: &ParamStore, kind: &str, config_hash: &str, model_config: serde_json::Value) -> Result<()> {
    let (bin, man) = paths(stem);
    let mut bytes = Vec::with_capacity(ps.num_scalars() * 8);
    let mut params = Vec::new();
    for p in ps.iter() {
        let offset = bytes.len();
        for v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        params.push(ManifestEntry { name: p.name.clone(), shape: p.value.shape(), offset, bytes: bytes.len() - offset });
    }
    let manifest = Manifest { version: CHECKPOINT_VERSION, kind: kind.into(), config_hash: config_hash.into(), model_config, params };
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&man, text).map_err(|e| Error::io(&man, e))
}

pub fn read_manifest(stem: &Path) -> Result<Manifest> {
    let (_, man) = paths(stem);
    if !man.exists() {
        return Err(Error::MissingArtifact(man));
    }
    let text = std::fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", man.display())))?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("{}: unsupported checkpoint version {}", man.display(), m.version)));
    }
    Ok(m)
}

/// Loads weights into a store whose layout must match the manifest exactly.
pub fn load_into(stem: &Path, ps: &mut ParamStore) -> Result<Manifest> {
    let manifest = read_manifest(stem)?;
    let (bin, _) = paths(stem);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if manifest.params.len() != ps.len() {
        return Err(Error::Format(format!("{}: {} tensors, model has {}", bin.display(), manifest.params.len(), ps.len())));
    }
    for (entry, p) in manifest.params.iter().zip(ps.iter_mut()) {
        if entry.name != p.name || entry.shape != p.value.shape() || entry.bytes != p.value.len() * 8 {
            return Err(Error::Format(format!("{}: tensor {} does not match model layout", bin.display(), entry.name)));
        }
        let chunk = bytes
            .get(entry.offset..entry.offset + entry.bytes)
            .ok_or_else(|| Error::Format(format!("{}: truncated at {}", bin.display(), entry.name)))?;
        for (v, c) in p.value.data.iter_mut().zip(chunk.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn round_trip() {
        let mut ps = ParamStore::new();
        ps.add("a", Tensor::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.1), true);
        ps.add("b", Tensor::scalar(std::f64::consts::PI), false);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        save(&stem, &ps, "test", "abc", serde_json::json!({"w": 1})).unwrap();

        let mut other = ps.clone();
        for p in other.iter_mut() {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let m = load_into(&stem, &mut other).unwrap();
        assert_eq!(m.config_hash, "abc");
        assert_eq!(m.params[1].offset, 48);
        for (x, y) in ps.iter().zip(other.iter()) {
            assert_eq!(x.value, y.value);
        }

        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::zeros(3, 2), true);
        wrong.add("b", Tensor::scalar(0.0), false);
        assert!(load_into(&stem, &mut wrong).is_err());
    }
}
