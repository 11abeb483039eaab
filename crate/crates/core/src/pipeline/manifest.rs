use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: String,
    pub params_hash: String,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub completed_at: u64,
    #[serde(default)]
    pub cache_hits: u64,
}

/// Per-stage record of what was consumed and produced, by content hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    Ok(seed::sha256_hex(&bytes))
}

pub fn hash_files(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, PipelineError> {
    paths.iter().map(|p| Ok((p.display().to_string(), hash_file(p)?))).collect()
}

impl RunManifest {
    pub fn path(workdir: &Path) -> PathBuf {
        workdir.join("manifest.json")
    }

    pub fn load(workdir: &Path) -> Result<Self, PipelineError> {
        let path = Self::path(workdir);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Data { stage: "manifest".into(), message: format!("{}: {e}", path.display()) })
    }

    /// Written through a temporary file and a rename so readers never see a
    /// partial manifest.
    pub fn save(&self, workdir: &Path) -> Result<(), PipelineError> {
        let path = Self::path(workdir);
        let io = |source| PipelineError::Io { path: path.display().to_string(), source };
        fs::create_dir_all(workdir).map_err(io)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self).expect("manifest serializes")).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    /// True when the stage completed with these exact inputs and parameters
    /// and its outputs are still present and unchanged.
    pub fn is_fresh(&self, stage: &str, inputs: &BTreeMap<String, String>, params_hash: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        rec.status == "completed"
            && rec.params_hash == params_hash
            && &rec.inputs == inputs
            && rec.outputs.iter().all(|(p, h)| hash_file(Path::new(p)).map(|x| &x == h).unwrap_or(false))
    }

    pub fn record_hit(&mut self, stage: &str) {
        if let Some(rec) = self.stages.get_mut(stage) {
            rec.cache_hits += 1;
        }
    }

    pub fn record(&mut self, stage: &str, params_hash: &str, inputs: BTreeMap<String, String>, outputs: &[PathBuf]) -> Result<(), PipelineError> {
        let completed_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let outputs = hash_files(outputs)?;
        self.stages.insert(
            stage.to_string(),
            StageRecord { status: "completed".into(), params_hash: params_hash.to_string(), inputs, outputs, completed_at, cache_hits: 0 },
        );
        Ok(())
    }
}
