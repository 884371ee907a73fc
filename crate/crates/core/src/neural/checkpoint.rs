//! Checkpoint container: a JSON manifest plus one little-endian payload.
//!
//! `<stem>.json` lists every tensor with its byte offset into `<stem>.bin`,
//! along with the model config, seed, optimizer step and the SHA-256 of the
//! payload. Both files are written atomically, payload first, so a manifest
//! that exists always refers to a complete payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{Moments, ParameterStore};
use super::tensor::NdArray;
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic, write_json_atomic};

pub const FORMAT: &str = "scanner-checkpoint-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub sha256: String,
    pub payload: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(stem: &Path, store: &ParameterStore, config: &serde_json::Value, seed: u64) -> Result<Manifest> {
    let mut payload = Vec::with_capacity(store.num_values() * 8);
    let mut tensors = Vec::new();
    let mut push = |name: &str, role: TensorRole, a: &NdArray, payload: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            role,
            shape: a.shape().to_vec(),
            dtype: "f64".into(),
            offset: payload.len() as u64,
        });
        for v in a.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, a) in store.iter() {
        push(name, TensorRole::Param, a, &mut payload);
    }
    for name in store.names() {
        if let Some(m) = store.moments(name) {
            push(name, TensorRole::AdamM, &m.m, &mut payload);
            push(name, TensorRole::AdamV, &m.v, &mut payload);
        }
    }
    let bin = payload_path(stem);
    write_atomic(&bin, &payload)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        config: config.clone(),
        seed,
        step: store.step(),
        sha256: sha256_hex(&payload),
        payload: bin
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    write_json_atomic(&manifest_path(stem), &manifest)?;
    Ok(manifest)
}

/// Loads a checkpoint, verifying the payload hash. Values are bit-exact.
pub fn load_checkpoint(stem: &Path) -> Result<(ParameterStore, Manifest)> {
    let mpath = manifest_path(stem);
    if !mpath.exists() {
        return Err(Error::Checkpoint(format!("no manifest at {}", mpath.display())));
    }
    let manifest: Manifest = crate::io::read_json(&mpath)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    let bin = mpath.with_file_name(&manifest.payload);
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if sha256_hex(&payload) != manifest.sha256 {
        return Err(Error::Checkpoint(format!("payload hash mismatch for {}", bin.display())));
    }
    let mut store = ParameterStore::new();
    let mut m_parts = std::collections::BTreeMap::new();
    let mut v_parts = std::collections::BTreeMap::new();
    for t in &manifest.tensors {
        if t.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype `{}`", t.dtype)));
        }
        let n: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` runs past payload end", t.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let a = NdArray::new(t.shape.clone(), data)?;
        match t.role {
            TensorRole::Param => store.insert(t.name.clone(), a)?,
            TensorRole::AdamM => {
                m_parts.insert(t.name.clone(), a);
            }
            TensorRole::AdamV => {
                v_parts.insert(t.name.clone(), a);
            }
        }
    }
    for (name, m) in m_parts {
        let v = v_parts
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing second moment for `{name}`")))?;
        store.moments_mut().insert(name, Moments { m, v });
    }
    store.set_step(manifest.step);
    Ok((store, manifest))
}
