//! Retrieval-augmented API sequence recommendation.
//!
//! Given a natural-language code annotation, the pipeline links it to the most
//! similar Q&A post (embedding filter followed by a pair-classifier re-rank),
//! expands the query with the post's title and answer APIs, and generates an
//! API call sequence with a three-channel encoder-decoder under beam search.
//!
//! Modules map onto pipeline stages:
//!
//! - [`corpus`]: records, ingestion, API vocabulary, filtering and splitting
//! - [`triplets`]: overlap-rate mining of contrastive training data
//! - [`linker`]: filtering embedder, re-ranking classifier, two-stage retrieval
//! - [`generator`]: subtokens, the encoder-decoder, greedy and beam decoding
//! - [`metrics`]: BLEU, set precision/recall, match categories, Mann-Whitney U
//! - [`pipeline`]: run configuration, stage caching and the experiment stages
//!
//! Data-parallel loops go through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and degrades to sequential iteration otherwise.

pub mod corpus;
pub mod exec;
pub mod generator;
pub mod linker;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod triplets;

pub use corpus::{AnnotationPair, ApiCall, ApiSequence, ApiVocabulary, CorpusSplit, QAPost};
pub use exec::Exec;
