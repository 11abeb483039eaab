use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector, LinkerError, Result};
use crate::corpus::QAPost;
use crate::exec::Exec;

const CHUNK: usize = 256;
const MAGIC: &[u8] = b"APISEQ-INDEX\n";

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    embedder_hash: String,
    dim: usize,
    count: usize,
}

/// Normalized title embeddings of a post collection, in collection order.
#[derive(Debug, Clone, PartialEq)]
pub struct PostIndex {
    embedder_hash: String,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl PostIndex {
    pub fn empty(embedder_hash: &str, dim: usize) -> Self {
        Self { embedder_hash: embedder_hash.to_string(), dim, ids: Vec::new(), vectors: Vec::new() }
    }

    /// Embeds every title. Work is split into fixed-size chunks, so the
    /// result does not depend on the number of workers.
    pub fn build<E: Embedder + ?Sized>(embedder: &E, posts: &[QAPost], exec: Exec) -> Result<Self> {
        let chunks = exec.map_chunks(posts, CHUNK, |chunk| {
            let titles: Vec<&str> = chunk.iter().map(|p| p.title.as_str()).collect();
            embedder.embed_batch(&titles)
        });
        let mut vectors = Vec::with_capacity(posts.len());
        for c in chunks {
            vectors.extend(c?.into_iter().map(|v| v.normalized()));
        }
        Ok(Self {
            embedder_hash: embedder.fingerprint().to_string(),
            dim: embedder.dim(),
            ids: posts.iter().map(|p| p.id.clone()).collect(),
            vectors,
        })
    }

    pub fn embedder_hash(&self) -> &str {
        &self.embedder_hash
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    /// Header line (JSON: embedder hash, dim, count) after a magic line, then
    /// per post a `u32` id length, the id bytes and `dim` little-endian `f32`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader { embedder_hash: self.embedder_hash.clone(), dim: self.dim, count: self.ids.len() };
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in &v.0 {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| LinkerError::CorruptIndex(m.to_string());
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| corrupt("bad magic"))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header"))?;
        let header: IndexHeader = serde_json::from_slice(&rest[..nl]).map_err(|e| LinkerError::CorruptIndex(e.to_string()))?;
        let mut data = &rest[nl + 1..];
        let mut ids = Vec::with_capacity(header.count);
        let mut vectors = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            if data.len() < 4 {
                return Err(corrupt("truncated record"));
            }
            let len = u32::from_le_bytes(data[..4].try_into().expect("4 bytes")) as usize;
            data = &data[4..];
            if data.len() < len + header.dim * 4 {
                return Err(corrupt("truncated record"));
            }
            ids.push(String::from_utf8(data[..len].to_vec()).map_err(|_| corrupt("id is not UTF-8"))?);
            data = &data[len..];
            let v = data[..header.dim * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            vectors.push(EmbeddingVector(v));
            data = &data[header.dim * 4..];
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { embedder_hash: header.embedder_hash, dim: header.dim, ids, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| LinkerError::Io { path: path.display().to_string(), source };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(path, self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| LinkerError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
