//! Checkpoint files: a JSON manifest listing tensor names, shapes and byte
//! offsets, next to a raw little-endian float32 blob.
//!
//! `save_checkpoint("dir/agent0")` writes `dir/agent0.json` and
//! `dir/agent0.bin`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("blob length {actual} does not cover entry `{name}` ({expected} bytes)")]
    Truncated { name: String, expected: usize, actual: usize },
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

pub fn save_checkpoint(stem: &Path, entries: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    let mut manifest = Manifest { tensors: Vec::with_capacity(entries.len()) };
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in entries {
        manifest.tensors.push(ManifestEntry {
            name: (*name).to_string(),
            shape: tensor.shape().to_vec(),
            offset: blob.len(),
            len: tensor.len(),
        });
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let mut f = fs::File::create(&json_path)
        .map_err(|source| CheckpointError::Io { path: json_path.clone(), source })?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    f.write_all(text.as_bytes())
        .map_err(|source| CheckpointError::Io { path: json_path.clone(), source })?;
    fs::write(&bin_path, &blob)
        .map_err(|source| CheckpointError::Io { path: bin_path.clone(), source })?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let text = fs::read_to_string(&json_path)
        .map_err(|source| CheckpointError::Io { path: json_path.clone(), source })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|source| CheckpointError::Manifest { path: json_path.clone(), source })?;
    let blob = fs::read(&bin_path)
        .map_err(|source| CheckpointError::Io { path: bin_path.clone(), source })?;

    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let bytes = entry.len * 4;
        if entry.offset + bytes > blob.len() {
            return Err(CheckpointError::Truncated {
                name: entry.name,
                expected: entry.offset + bytes,
                actual: blob.len(),
            });
        }
        let mut data = Vec::with_capacity(entry.len);
        for i in 0..entry.len {
            let at = entry.offset + i * 4;
            data.push(f32::from_le_bytes([
                blob[at],
                blob[at + 1],
                blob[at + 2],
                blob[at + 3],
            ]));
        }
        out.push((entry.name, Tensor::new(&entry.shape, data)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("params");
        let a = Tensor::new(&[2, 3], vec![1.0f32, -2.5, 3.25, 0.0, 1e-7, 9.0]);
        let b = Tensor::new(&[4], vec![0.5f32, 0.25, -0.125, 2.0]);
        save_checkpoint(&stem, &[("a", &a), ("b", &b)]).unwrap();
        let loaded = load_checkpoint(&stem).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a");
        assert_eq!(&loaded[0].1, &a);
        assert_eq!(loaded[1].0, "b");
        assert_eq!(&loaded[1].1, &b);
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("params");
        let a = Tensor::new(&[8], (0..8).map(|i| i as f32).collect());
        save_checkpoint(&stem, &[("a", &a)]).unwrap();
        let blob = std::fs::read(stem.with_extension("bin")).unwrap();
        std::fs::write(stem.with_extension("bin"), &blob[..blob.len() - 4]).unwrap();
        match load_checkpoint(&stem) {
            Err(CheckpointError::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {:?}", other.map(|_| ())),
        }
    }
}
