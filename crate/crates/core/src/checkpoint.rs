//! Tensor checkpoints: a JSON manifest describing each tensor (name, shape,
//! dtype, byte offset) plus a flat little-endian `f64` blob.
//!
//! Two on-disk layouts share the manifest:
//! - a pair of files, `<stem>.json` and `<stem>.bin`;
//! - a single bundle file: magic `PNCK`, a `u64` LE manifest length, the
//!   manifest bytes, then the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTYPE: &str = "f64le";
const MAGIC: &[u8; 4] = b"PNCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// An ordered collection of named tensors with free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> (Manifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: DTYPE.to_string(),
                offset,
                nbytes: blob.len() as u64 - offset,
            });
        }
        (
            Manifest {
                tensors: entries,
                meta: self.meta.clone(),
            },
            blob,
        )
    }

    pub fn decode(manifest: Manifest, blob: &[u8]) -> Result<Self> {
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.dtype != DTYPE {
                return Err(Error::Checkpoint(format!(
                    "tensor {}: unsupported dtype {}",
                    e.name, e.dtype
                )));
            }
            let numel: usize = e.shape.iter().product();
            if e.nbytes != numel as u64 * 8 {
                return Err(Error::Checkpoint(format!(
                    "tensor {}: {} bytes for {} elements",
                    e.name, e.nbytes, numel
                )));
            }
            let start = e.offset as usize;
            let bytes = blob
                .get(start..start + e.nbytes as usize)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {}: blob truncated", e.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Checkpoint {
            tensors,
            meta: manifest.meta,
        })
    }

    fn pair_paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save_pair(&self, stem: &Path) -> Result<()> {
        let (json, bin) = Self::pair_paths(stem);
        let (manifest, blob) = self.encode();
        fs::write(json, serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(bin, blob)?;
        Ok(())
    }

    pub fn load_pair(stem: &Path) -> Result<Self> {
        let (json, bin) = Self::pair_paths(stem);
        let manifest: Manifest = serde_json::from_slice(&fs::read(json)?)?;
        Self::decode(manifest, &fs::read(bin)?)
    }

    pub fn to_bundle(&self) -> Result<Vec<u8>> {
        let (manifest, blob) = self.encode();
        let header = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(12 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bundle(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad bundle magic".into()));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let header = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Checkpoint("bundle manifest truncated".into()))?;
        let manifest: Manifest = serde_json::from_slice(header)?;
        Self::decode(manifest, &bytes[12 + len..])
    }

    pub fn save_bundle(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bundle()?)?;
        Ok(())
    }

    pub fn load_bundle(path: &Path) -> Result<Self> {
        Self::from_bundle(&fs::read(path)?)
    }
}
