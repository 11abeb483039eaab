//! Experiment orchestration: one function per pipeline stage, all driven by
//! a [`RunConfig`] and writing into a work directory.
//!
//! Each stage hashes its inputs and parameters; when the manifest shows the
//! stage already completed on identical hashes and its outputs are intact,
//! the stage is skipped.
//!
//! Work directory layout:
//!
//! ```text
//! prepare/     train.jsonl valid.jsonl test.jsonl api_vocab.txt summary.json
//! linker/      triplets.jsonl labeled_pairs.jsonl embedder.bin classifier.bin index.bin quality.json
//! link/        linked.jsonl expanded-<variant>.jsonl
//! generator/   <variant>/model.bin <variant>/report.json <variant>/checkpoints/
//! predict/     <variant>.jsonl
//! evaluate/    report.json report.txt
//! analyze/     matches.json
//! manifest.json
//! ```

mod config;
mod manifest;
mod stages;

pub use config::RunConfig;
pub use manifest::{hash_file, RunManifest, StageRecord};
pub use stages::{
    cmd_analyze_matches, cmd_evaluate, cmd_link, cmd_predict, cmd_prepare, cmd_train_generator, cmd_train_linker, run_all, EvalRow,
    EvalSource, EvaluationReport, ExpandedRecord, LinkedRecord, PredictionRecord, StageOutcome,
};

use std::path::{Path, PathBuf};

use crate::corpus::CorpusError;
use crate::exec::Exec;
use crate::generator::{GeneratorError, Variant};
use crate::linker::LinkerError;
use crate::triplets::TripletError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Data { stage: String, message: String },
    #[error("{stage}: training failed: {message}")]
    Training { stage: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 usage, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 2,
            PipelineError::Training { .. } => 3,
        }
    }

    pub(crate) fn data(stage: &str, e: impl std::fmt::Display) -> Self {
        PipelineError::Data { stage: stage.to_string(), message: e.to_string() }
    }

    pub(crate) fn corpus(stage: &str, e: CorpusError) -> Self {
        Self::data(stage, e)
    }

    pub(crate) fn triplets(stage: &str, e: TripletError) -> Self {
        Self::data(stage, e)
    }

    pub(crate) fn linker(stage: &str, e: LinkerError) -> Self {
        match e {
            LinkerError::NonFiniteLoss { .. } | LinkerError::EmptyTrainingSet | LinkerError::SingleClass(_) => {
                PipelineError::Training { stage: stage.to_string(), message: e.to_string() }
            }
            other => Self::data(stage, other),
        }
    }

    pub(crate) fn generator(stage: &str, e: GeneratorError) -> Self {
        match e {
            GeneratorError::NonFiniteLoss { .. } => PipelineError::Training { stage: stage.to_string(), message: e.to_string() },
            GeneratorError::InvalidConfig(m) => PipelineError::Usage(m),
            other => Self::data(stage, other),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Artifact paths inside a work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("prepare").join(format!("{name}.jsonl"))
    }

    pub fn api_vocab(&self) -> PathBuf {
        self.root.join("prepare/api_vocab.txt")
    }

    pub fn prepare_summary(&self) -> PathBuf {
        self.root.join("prepare/summary.json")
    }

    pub fn linker(&self, file: &str) -> PathBuf {
        self.root.join("linker").join(file)
    }

    pub fn linked(&self) -> PathBuf {
        self.root.join("link/linked.jsonl")
    }

    pub fn expanded(&self, variant: Variant) -> PathBuf {
        self.root.join("link").join(format!("expanded-{variant}.jsonl"))
    }

    pub fn generator_dir(&self, variant: Variant) -> PathBuf {
        self.root.join("generator").join(variant.as_str())
    }

    pub fn predictions(&self, variant: Variant) -> PathBuf {
        self.root.join("predict").join(format!("{variant}.jsonl"))
    }

    pub fn evaluate(&self, file: &str) -> PathBuf {
        self.root.join("evaluate").join(file)
    }

    pub fn matches(&self) -> PathBuf {
        self.root.join("analyze/matches.json")
    }
}

impl RunConfig {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.workdir)
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::default()
        } else {
            Exec::Sequential
        }
    }
}
