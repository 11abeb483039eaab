use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::generator::{GenerationConfig, GeneratorConfig, Variant};
use crate::linker::{ClassifierConfig, EmbedderConfig};
use crate::metrics::BleuUnit;
use crate::seed;
use crate::triplets::TripletConfig;

/// Every knob of an experiment run. Read from a flat `key = value` file;
/// absent keys take the defaults shown by `show-config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pairs: PathBuf,
    pub posts: PathBuf,
    pub workdir: PathBuf,
    /// Reject malformed input lines instead of skipping them.
    pub strict: bool,
    pub seed: u64,
    pub parallel: bool,

    pub min_frequency: usize,
    pub split_seed: u64,

    pub triplet_threshold: f64,
    pub triplet_max_rate: f64,
    pub triplet_p: usize,
    pub triplet_n: usize,

    pub embedder_dim: usize,
    pub embedder_hidden: usize,
    pub embedder_margin: f64,
    pub embedder_epochs: usize,
    pub embedder_learning_rate: f64,
    pub embedder_batch_size: usize,
    pub classifier_dim: usize,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    pub classifier_batch_size: usize,
    pub link_k: usize,

    pub variant: Variant,
    pub max_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub share_encoders: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beam_size: usize,
    pub max_decode_steps: usize,
    pub length_penalty: Option<f64>,

    pub bleu_unit: BleuUnit,
    pub bleu_smoothing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let emb = EmbedderConfig::default();
        let cls = ClassifierConfig::default();
        let gen = GeneratorConfig::default();
        let search = GenerationConfig::default();
        let tri = TripletConfig::default();
        Self {
            pairs: PathBuf::from("data/pairs.jsonl"),
            posts: PathBuf::from("data/posts.jsonl"),
            workdir: PathBuf::from("work"),
            strict: false,
            seed: 42,
            parallel: true,
            min_frequency: 5,
            split_seed: 42,
            triplet_threshold: tri.threshold,
            triplet_max_rate: tri.max_rate,
            triplet_p: tri.p,
            triplet_n: tri.n,
            embedder_dim: emb.dim,
            embedder_hidden: emb.hidden,
            embedder_margin: emb.margin,
            embedder_epochs: emb.epochs,
            embedder_learning_rate: emb.learning_rate,
            embedder_batch_size: emb.batch_size,
            classifier_dim: cls.dim,
            classifier_hidden: cls.hidden,
            classifier_epochs: cls.epochs,
            classifier_learning_rate: cls.learning_rate,
            classifier_batch_size: cls.batch_size,
            link_k: 10,
            variant: Variant::PlusTitleApi,
            max_len: gen.max_len,
            d_model: gen.d_model,
            heads: gen.heads,
            ff_dim: gen.ff_dim,
            encoder_layers: gen.encoder_layers,
            decoder_layers: gen.decoder_layers,
            share_encoders: gen.share_encoders,
            epochs: gen.epochs,
            batch_size: gen.batch_size,
            learning_rate: gen.learning_rate,
            warmup_steps: gen.warmup_steps,
            beam_size: search.beam_size,
            max_decode_steps: search.max_decode_steps,
            length_penalty: search.length_penalty,
            bleu_unit: BleuUnit::default(),
            bleu_smoothing: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Usage(format!("config: {m}")));
        for (name, v) in [("triplet_threshold", self.triplet_threshold), ("triplet_max_rate", self.triplet_max_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let counts = [
            ("min_frequency", self.min_frequency),
            ("triplet_p", self.triplet_p),
            ("triplet_n", self.triplet_n),
            ("embedder_dim", self.embedder_dim),
            ("embedder_hidden", self.embedder_hidden),
            ("embedder_batch_size", self.embedder_batch_size),
            ("classifier_dim", self.classifier_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("classifier_batch_size", self.classifier_batch_size),
            ("link_k", self.link_k),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("decoder_layers", self.decoder_layers),
            ("batch_size", self.batch_size),
            ("beam_size", self.beam_size),
            ("max_decode_steps", self.max_decode_steps),
        ];
        for (name, v) in counts {
            if v < 1 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.embedder_margin < 0.0 {
            return fail("embedder_margin must be non-negative".into());
        }
        self.generator_config().validate().map_err(|e| PipelineError::Usage(format!("config: {e}")))?;
        Ok(())
    }

    /// Hash of the full configuration.
    pub fn hash(&self) -> String {
        seed::sha256_hex(self.to_toml().as_bytes())
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            threshold: self.triplet_threshold,
            max_rate: self.triplet_max_rate,
            p: self.triplet_p,
            n: self.triplet_n,
            seed: seed::derive_seed(self.seed, "triplets"),
        }
    }

    pub fn embedder_config(&self) -> EmbedderConfig {
        EmbedderConfig {
            dim: self.embedder_dim,
            hidden: self.embedder_hidden,
            margin: self.embedder_margin,
            epochs: self.embedder_epochs,
            learning_rate: self.embedder_learning_rate,
            batch_size: self.embedder_batch_size,
            seed: seed::derive_seed(self.seed, "embedder"),
            ..EmbedderConfig::default()
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            dim: self.classifier_dim,
            hidden: self.classifier_hidden,
            epochs: self.classifier_epochs,
            learning_rate: self.classifier_learning_rate,
            batch_size: self.classifier_batch_size,
            seed: seed::derive_seed(self.seed, "classifier"),
            ..ClassifierConfig::default()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            d_model: self.d_model,
            heads: self.heads,
            ff_dim: self.ff_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            share_encoders: self.share_encoders,
            max_len: self.max_len,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            seed: seed::derive_seed(self.seed, "generator"),
            ..GeneratorConfig::default()
        }
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig { beam_size: self.beam_size, max_decode_steps: self.max_decode_steps, length_penalty: self.length_penalty }
    }
}
