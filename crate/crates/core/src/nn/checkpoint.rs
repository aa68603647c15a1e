//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, UTF-8 JSON
//! manifest, then every tensor's values as little-endian scalars in manifest
//! order. Parsing validates every length before touching the payload.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::{shape_count, ParamStore, Real, Tensor};
use crate::error::NnError;

pub const MAGIC: &[u8; 8] = b"MGCKPT\x00\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    dtype: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

/// Named tensor groups (e.g. live weights, EMA weights, optimizer moments)
/// plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub metadata: serde_json::Value,
    pub groups: IndexMap<String, ParamStore<T>>,
}

fn err(m: impl Into<String>) -> NnError {
    NnError::Checkpoint(m.into())
}

impl<T: Real> Checkpoint<T> {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            groups: IndexMap::new(),
        }
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore<T>, NnError> {
        self.groups
            .get(name)
            .ok_or_else(|| err(format!("missing tensor group {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self
            .groups
            .iter()
            .flat_map(|(g, store)| {
                store.iter().map(move |(n, t)| TensorHeader {
                    group: g.clone(),
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.into(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for store in self.groups.values() {
            for (_, t) in store.iter() {
                for v in t.data() {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let rest = &bytes[16..];
        if len > rest.len() as u64 {
            return Err(err("manifest length exceeds file size"));
        }
        let (json, mut payload) = rest.split_at(len as usize);
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| err(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.dtype != T::DTYPE {
            return Err(err(format!(
                "dtype {} does not match expected {}",
                manifest.dtype,
                T::DTYPE
            )));
        }
        let mut groups: IndexMap<String, ParamStore<T>> = IndexMap::new();
        for h in manifest.tensors {
            let count = shape_count(&h.shape)?;
            let nbytes = count
                .checked_mul(T::BYTES)
                .filter(|&n| n <= payload.len())
                .ok_or_else(|| err(format!("payload truncated at tensor {}", h.name)))?;
            let (chunk, tail) = payload.split_at(nbytes);
            payload = tail;
            let data: Vec<T> = chunk.chunks_exact(T::BYTES).map(T::read_le).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("checkpoint tensor {}/{}", h.group, h.name)));
            }
            groups
                .entry(h.group)
                .or_default()
                .insert(h.name, Tensor::new(h.shape, data)?)?;
        }
        if !payload.is_empty() {
            return Err(err(format!("{} trailing bytes", payload.len())));
        }
        Ok(Self {
            metadata: manifest.metadata,
            groups,
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
