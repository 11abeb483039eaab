//! API sequence generation from an expanded query.
//!
//! A query has three channels (annotation, linked post title, linked post
//! APIs), each subtokenized and encoded by its own transformer encoder. The
//! encodings are concatenated along the sequence axis and a transformer
//! decoder produces API subtokens, searched greedily or with beam search.

mod decode;
mod model;
pub mod subtoken;
mod train;

pub use decode::{beam_search, chain_log_prob, greedy_decode, BeamHypothesis, StepModel};
pub use model::{Encoded, QueryDecoder, Seq2SeqModel};
pub use train::{evaluate_loss, train_generator, GeneratorReport, TrainExample};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ApiCall;
use crate::nn::ContainerError;
use subtoken::{subtokenize, SubtokenVocab, TokenMode};

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("record {record}: target sequence is empty")]
    EmptyTarget { record: String },
    #[error("{channel} channel has {len} subtokens, limit is {max}")]
    ChannelOverflow { channel: &'static str, len: usize, max: usize },
    #[error("prefix of {len} tokens exceeds max_decode_steps {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("non-finite loss in epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = GeneratorError> = std::result::Result<T, E>;

/// Which query channels the generator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AnnotationOnly,
    PlusTitle,
    PlusTitleApi,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::AnnotationOnly, Variant::PlusTitle, Variant::PlusTitleApi];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AnnotationOnly => "annotation_only",
            Variant::PlusTitle => "plus_title",
            Variant::PlusTitleApi => "plus_title_api",
        }
    }

    pub fn uses_title(self) -> bool {
        self != Variant::AnnotationOnly
    }

    pub fn uses_apis(self) -> bool {
        self == Variant::PlusTitleApi
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| GeneratorError::UnknownVariant(s.to_string()))
    }
}

/// Subtoken ids of the three query channels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub annotation: Vec<u32>,
    pub title: Vec<u32>,
    pub apis: Vec<u32>,
}

pub const CHANNEL_NAMES: [&str; 3] = ["annotation", "title", "api"];

impl ExpandedQuery {
    /// Tokenizes and head-truncates every channel to `max_len`. APIs keep
    /// the order they are given in.
    pub fn new<'a>(vocab: &SubtokenVocab, annotation: &str, title: &str, apis: impl IntoIterator<Item = &'a ApiCall>, max_len: usize) -> Self {
        let take = |tokens: Vec<String>| -> Vec<u32> { tokens.iter().take(max_len).map(|t| vocab.id(t)).collect() };
        Self {
            annotation: take(subtokenize(annotation, TokenMode::Query)),
            title: take(subtokenize(title, TokenMode::Query)),
            apis: take(api_subtokens(apis)),
        }
    }

    pub fn from_ids(annotation: Vec<u32>, title: Vec<u32>, apis: Vec<u32>) -> Self {
        Self { annotation, title, apis }
    }

    /// Clears the channels the variant does not use.
    pub fn masked(mut self, variant: Variant) -> Self {
        if !variant.uses_title() {
            self.title.clear();
        }
        if !variant.uses_apis() {
            self.apis.clear();
        }
        self
    }

    pub fn channels(&self) -> [&[u32]; 3] {
        [&self.annotation, &self.title, &self.apis]
    }

    pub fn check(&self, max_len: usize) -> Result<()> {
        for (name, ch) in CHANNEL_NAMES.iter().zip(self.channels()) {
            if ch.len() > max_len {
                return Err(GeneratorError::ChannelOverflow { channel: name, len: ch.len(), max: max_len });
            }
        }
        Ok(())
    }
}

/// Subtokens of an API list rendered in order.
pub fn api_subtokens<'a>(apis: impl IntoIterator<Item = &'a ApiCall>) -> Vec<String> {
    apis.into_iter().flat_map(|a| subtokenize(&a.canonical(), TokenMode::Api)).collect()
}

/// Encoder-decoder shape and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// One encoder for all channels instead of one per channel.
    pub share_encoders: bool,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            ff_dim: 256,
            encoder_layers: 2,
            decoder_layers: 6,
            share_encoders: false,
            max_len: 64,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 50,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GeneratorError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.max_len == 0 || self.batch_size == 0 || self.decoder_layers == 0 {
            return bad("max_len, batch_size and decoder_layers must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Search settings used at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beam_size: usize,
    pub max_decode_steps: usize,
    /// Divide scores by `len^alpha` when set; off by default.
    pub length_penalty: Option<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { beam_size: 5, max_decode_steps: 64, length_penalty: None }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_decode_steps == 0 {
            return Err(GeneratorError::InvalidConfig("beam_size and max_decode_steps must be at least 1".into()));
        }
        Ok(())
    }
}
