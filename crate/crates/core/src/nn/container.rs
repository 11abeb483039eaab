//! Self-describing model files.
//!
//! Layout: the magic line `APISEQ-MODEL\n`, a little-endian `u32` header
//! length, a JSON header (format version, model kind, seed, config, extra
//! metadata such as vocabularies, and the tensor table), then every tensor as
//! little-endian `f32` values in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{device, ParamStore};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"APISEQ-MODEL\n";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("expected a {expected} model, found {found}")]
    Kind { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub extra: serde_json::Value,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl ModelHeader {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value, extra: serde_json::Value) -> Self {
        Self { format_version: FORMAT_VERSION, kind: kind.to_string(), seed, config, extra, tensors: Vec::new() }
    }
}

/// Serializes a header and parameter store to bytes.
pub fn model_bytes(header: &ModelHeader, store: &ParamStore) -> Result<Vec<u8>, ContainerError> {
    let mut header = header.clone();
    header.tensors = store
        .names()
        .map(|n| TensorEntry { name: n.to_string(), shape: store.get(n).expect("listed").dims().to_vec() })
        .collect();
    let json = serde_json::to_vec(&header).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + store.num_parameters() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for entry in &header.tensors {
        let values: Vec<f32> = store.get(&entry.name).expect("listed").as_tensor().flatten_all()?.to_vec1()?;
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_model(path: &Path, header: &ModelHeader, store: &ParamStore) -> Result<(), ContainerError> {
    let bytes = model_bytes(header, store)?;
    let io = |source| ContainerError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_model(path: &Path, expected_kind: &str) -> Result<(ModelHeader, ParamStore), ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
    parse_model(&bytes, expected_kind)
}

pub(crate) fn parse_model(bytes: &[u8], expected_kind: &str) -> Result<(ModelHeader, ParamStore), ContainerError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or(ContainerError::BadMagic)?;
    if rest.len() < 4 {
        return Err(ContainerError::Corrupt("truncated header length".into()));
    }
    let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < len {
        return Err(ContainerError::Corrupt("truncated header".into()));
    }
    let header: ModelHeader = serde_json::from_slice(&rest[..len]).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ContainerError::Version(header.format_version));
    }
    if header.kind != expected_kind {
        return Err(ContainerError::Kind { expected: expected_kind.into(), found: header.kind });
    }
    let mut data = &rest[len..];
    let mut store = ParamStore::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < n * 4 {
            return Err(ContainerError::Corrupt(format!("tensor {} truncated", entry.name)));
        }
        let values: Vec<f32> = data[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        data = &data[n * 4..];
        store.insert(&entry.name, &Tensor::from_vec(values, entry.shape.as_slice(), &device())?)?;
    }
    if !data.is_empty() {
        return Err(ContainerError::Corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use crate::seed;

    #[test]
    fn container_round_trips() {
        let mut store = ParamStore::new();
        let mut rng = seed::rng(3);
        store.get_or_init("b", &[2, 3], Init::Normal(1.0), &mut rng).unwrap();
        store.get_or_init("a", &[4], Init::Normal(1.0), &mut rng).unwrap();
        let header = ModelHeader::new("toy", 3, serde_json::json!({"dim": 4}), serde_json::json!(null));
        let bytes = model_bytes(&header, &store).unwrap();
        let (h, loaded) = parse_model(&bytes, "toy").unwrap();
        assert_eq!(h.config, header.config);
        assert_eq!(h.tensors.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(model_bytes(&h, &loaded).unwrap(), bytes);
        assert!(matches!(parse_model(&bytes, "other"), Err(ContainerError::Kind { .. })));
        assert!(matches!(parse_model(b"nope", "toy"), Err(ContainerError::BadMagic)));
        assert!(parse_model(&bytes[..bytes.len() - 1], "toy").is_err());
    }
}
