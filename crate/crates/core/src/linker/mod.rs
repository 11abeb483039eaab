//! Linking annotations to Q&A posts.
//!
//! Retrieval runs in two stages. A filtering embedder encodes the annotation
//! and every post title independently; the `k` titles with the highest cosine
//! similarity become candidates. A pair classifier then scores each
//! (annotation, title) pair jointly and the candidates are re-ranked by that
//! probability. The top re-ranked post is the link.
//!
//! Both stages are behind traits ([`Embedder`], [`PairScorer`]) so other
//! encoders can be swapped in without touching retrieval.

mod classifier;
mod embedder;
mod index;

pub use classifier::{accuracy as classifier_accuracy, train_classifier, ClassifierConfig, PairClassifier};
pub use embedder::{train_embedder, EmbedderConfig, TextEmbedder};
pub use index::PostIndex;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{ApiSequence, QAPost};
use crate::exec::Exec;
use crate::generator::subtoken::{subtokenize, SubtokenVocab, TokenMode};
use crate::metrics::{categorize, MatchCategory};
use crate::nn::ContainerError;
use crate::triplets::Triplet;

#[derive(Debug, thiserror::Error)]
pub enum LinkerError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("classifier training data contains only label {0}")]
    SingleClass(u8),
    #[error("non-finite loss in epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("post index is empty")]
    EmptyIndex,
    #[error("index was built by embedder {index} but the current embedder is {current}")]
    StaleIndex { index: String, current: String },
    #[error("index and post collection disagree: {0}")]
    IndexMismatch(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = LinkerError> = std::result::Result<T, E>;

/// A text embedding; retrieval stores unit-norm vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self(self.0.iter().map(|&x| (x as f64 / n) as f32).collect())
    }
}

/// Cosine similarity, clamped to [-1, 1]; 0 when either vector is zero.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "embedding dimensions differ");
    let dot: f64 = a.0.iter().zip(&b.0).map(|(&x, &y)| x as f64 * y as f64).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}

/// Encodes texts independently into a shared vector space.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    /// Identifies the parameters; indexes record it to detect staleness.
    fn fingerprint(&self) -> &str;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.pop().expect("one embedding per text"))
    }
}

/// Scores (left, right) text pairs jointly with a relevance probability.
pub trait PairScorer: Sync {
    fn score_batch(&self, left: &str, rights: &[&str]) -> Result<Vec<f64>>;
}

/// Word tokens used by both linker models.
pub fn text_tokens(text: &str) -> Vec<String> {
    subtokenize(text, TokenMode::Query)
}

/// Token vocabulary over annotation and title texts.
pub fn build_text_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> SubtokenVocab {
    SubtokenVocab::build(texts.into_iter().flat_map(text_tokens), 1)
}

pub(crate) fn encode_text(vocab: &SubtokenVocab, text: &str, max_tokens: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = text_tokens(text).iter().take(max_tokens).map(|t| vocab.id(t)).collect();
    if ids.is_empty() {
        ids.push(SubtokenVocab::UNK_ID);
    }
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedPost {
    pub post_index: usize,
    pub post: QAPost,
    pub filter_similarity: f64,
    pub rerank_score: Option<f64>,
}

/// The `k` posts most similar to the annotation, best first; ties go to the
/// smaller post id.
pub fn filter_top_k<E: Embedder + ?Sized>(embedder: &E, index: &PostIndex, posts: &[QAPost], annotation: &str, k: usize) -> Result<Vec<RankedPost>> {
    if k == 0 {
        return Err(LinkerError::InvalidK);
    }
    if index.is_empty() || posts.is_empty() {
        return Err(LinkerError::EmptyIndex);
    }
    if index.embedder_hash() != embedder.fingerprint() {
        return Err(LinkerError::StaleIndex { index: index.embedder_hash().to_string(), current: embedder.fingerprint().to_string() });
    }
    if index.len() != posts.len() {
        return Err(LinkerError::IndexMismatch(format!("{} indexed vs {} posts", index.len(), posts.len())));
    }
    let query = embedder.embed(annotation)?;
    let mut scored: Vec<(f64, usize)> = index.vectors().iter().enumerate().map(|(i, v)| (cosine_similarity(&query, v), i)).collect();
    let ids = index.ids();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    scored
        .into_iter()
        .map(|(sim, i)| {
            if posts[i].id != ids[i] {
                return Err(LinkerError::IndexMismatch(format!("slot {i} holds {} but post is {}", ids[i], posts[i].id)));
            }
            Ok(RankedPost { post_index: i, post: posts[i].clone(), filter_similarity: sim, rerank_score: None })
        })
        .collect()
}

fn rerank_order(a: &RankedPost, b: &RankedPost) -> Ordering {
    let sa = a.rerank_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.rerank_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then_with(|| b.filter_similarity.total_cmp(&a.filter_similarity))
        .then_with(|| a.post.id.cmp(&b.post.id))
}

/// Attaches classifier probabilities and sorts best first.
pub fn rerank<S: PairScorer + ?Sized>(scorer: &S, annotation: &str, mut candidates: Vec<RankedPost>) -> Result<Vec<RankedPost>> {
    if candidates.is_empty() {
        return Ok(candidates);
    }
    let titles: Vec<&str> = candidates.iter().map(|c| c.post.title.as_str()).collect();
    let scores = scorer.score_batch(annotation, &titles)?;
    for (c, s) in candidates.iter_mut().zip(scores) {
        c.rerank_score = Some(s);
    }
    candidates.sort_by(rerank_order);
    Ok(candidates)
}

/// Filter, re-rank, and return the top post.
pub fn link<E: Embedder + ?Sized, S: PairScorer + ?Sized>(
    embedder: &E,
    scorer: &S,
    index: &PostIndex,
    posts: &[QAPost],
    annotation: &str,
    k: usize,
) -> Result<RankedPost> {
    let candidates = filter_top_k(embedder, index, posts, annotation, k)?;
    Ok(rerank(scorer, annotation, candidates)?.into_iter().next().expect("non-empty index yields a candidate"))
}

/// Links many annotations; output order follows `annotations`.
pub fn link_all<E: Embedder + ?Sized, S: PairScorer + ?Sized>(
    embedder: &E,
    scorer: &S,
    index: &PostIndex,
    posts: &[QAPost],
    annotations: &[&str],
    k: usize,
    exec: Exec,
) -> Result<Vec<RankedPost>> {
    exec.try_map(annotations, |a| link(embedder, scorer, index, posts, a, k))
}

pub fn categorize_link(target: &ApiSequence, linked: &QAPost) -> MatchCategory {
    categorize(&target.as_set(), &linked.answer_apis)
}

/// Mean cos(anchor, positive) minus mean cos(anchor, negative).
pub fn separation<E: Embedder + ?Sized>(embedder: &E, triplets: &[Triplet]) -> Result<Separation> {
    if triplets.is_empty() {
        return Err(LinkerError::EmptyTrainingSet);
    }
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut wins = 0usize;
    for chunk in triplets.chunks(256) {
        let texts: Vec<&str> = chunk.iter().flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()]).collect();
        let v = embedder.embed_batch(&texts)?;
        for tri in v.chunks(3) {
            let p = cosine_similarity(&tri[0], &tri[1]);
            let n = cosine_similarity(&tri[0], &tri[2]);
            pos += p;
            neg += n;
            if p > n {
                wins += 1;
            }
        }
    }
    let n = triplets.len() as f64;
    Ok(Separation { mean_positive: pos / n, mean_negative: neg / n, ordered_fraction: wins as f64 / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub mean_positive: f64,
    pub mean_negative: f64,
    /// Fraction of triplets whose positive outscores the negative.
    pub ordered_fraction: f64,
}

impl Separation {
    pub fn gap(&self) -> f64 {
        self.mean_positive - self.mean_negative
    }
}

/// Per-epoch mean losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: Option<f64>,
}
