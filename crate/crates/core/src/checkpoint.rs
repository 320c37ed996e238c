//! Parameter checkpoints.
//!
//! A checkpoint is a directory with two files:
//!
//! * `params.bin`: every tensor's values as little-endian `f64`, row-major,
//!   concatenated in manifest order with no padding or header.
//! * `manifest.json`: `{"format": "slicenet-params", "version": 1,
//!   "tensors": [{"name", "rows", "cols", "offset"}]}` where `offset` is the
//!   byte offset of the tensor in `params.bin`.
//!
//! Names are slash-separated, e.g. `agent/3/gat1/source`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const FORMAT: &str = "slicenet-params";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(dir: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(tensors.iter().map(|(_, t)| t.len() * 8).sum());
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.clone(), rows: t.rows, cols: t.cols, offset: bytes.len() });
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, tensors: entries };
    fs::write(dir.join("params.bin"), bytes)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", manifest.format, manifest.version)));
    }
    let bytes = fs::read(dir.join("params.bin"))?;
    manifest
        .tensors
        .into_iter()
        .map(|e| {
            let len = e.rows * e.cols;
            let end = e.offset + 8 * len;
            let raw = bytes.get(e.offset..end).ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of params.bin", e.name)))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            Ok((e.name, Tensor::new(e.rows, e.cols, data)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, f64::MAX]);
        let b = Tensor::scalar(0.125);
        save(dir.path(), &[("agent/0/w".into(), &a), ("agent/0/b".into(), &b)]).unwrap();
        let bytes = fs::read(dir.path().join("params.bin")).unwrap();
        assert_eq!(bytes.len(), 7 * 8);
        assert_eq!(f64::from_le_bytes(bytes[48..56].try_into().unwrap()), 0.125);
        let back = load(dir.path()).unwrap();
        assert_eq!(back, vec![("agent/0/w".to_string(), a), ("agent/0/b".to_string(), b)]);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &[("x".into(), &Tensor::zeros(4, 4))]).unwrap();
        fs::write(dir.path().join("params.bin"), [0u8; 16]).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
