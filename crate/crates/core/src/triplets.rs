//! Mining contrastive training data from API overlap.
//!
//! A post is a positive for an annotation when its answer mentions at least
//! `threshold` of the annotation's target API set, and a negative candidate
//! when it mentions less than `max_rate` of it. Each annotation yields the
//! cross product of a bounded number of positives and sampled negatives.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, AnnotationPair, ApiCall, ApiSequence, CorpusError, QAPost};
use crate::exec::Exec;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum TripletError {
    #[error("target API sequence is empty")]
    EmptyTarget,
    #[error("negative count must be at least 1")]
    ZeroCount,
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Fraction of a target API set mentioned by a post's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapScore {
    pub matched: BTreeSet<ApiCall>,
    pub target_size: usize,
}

impl OverlapScore {
    pub fn value(&self) -> f64 {
        self.matched.len() as f64 / self.target_size as f64
    }
}

pub fn overlap_rate(target: &ApiSequence, post: &QAPost) -> Result<OverlapScore, TripletError> {
    let set = target.as_set();
    if set.is_empty() {
        return Err(TripletError::EmptyTarget);
    }
    let matched = set.iter().filter(|a| post.answer_apis.contains(*a)).cloned().collect();
    Ok(OverlapScore { matched, target_size: set.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    /// Inclusive lower bound on the overlap rate of a positive post.
    pub threshold: f64,
    /// Exclusive upper bound on the overlap rate of a negative post.
    pub max_rate: f64,
    /// Positives kept per annotation.
    pub p: usize,
    /// Negatives sampled per annotation.
    pub n: usize,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { threshold: 0.75, max_rate: 0.01, p: 10, n: 10, seed: 0 }
    }
}

/// Posts with overlap ≥ `threshold`, sorted by rate descending then id.
pub fn find_positives<'a>(pair: &AnnotationPair, posts: &'a [QAPost], threshold: f64) -> Result<Vec<&'a QAPost>, TripletError> {
    let mut scored = Vec::new();
    for post in posts {
        let rate = overlap_rate(&pair.target, post)?.value();
        if rate >= threshold {
            scored.push((rate, post));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}

/// Uniform sample without replacement of up to `count` posts with overlap
/// below `max_rate`. Returns every eligible post when fewer qualify.
pub fn find_negatives<'a>(
    pair: &AnnotationPair,
    posts: &'a [QAPost],
    max_rate: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<&'a QAPost>, TripletError> {
    if count == 0 {
        return Err(TripletError::ZeroCount);
    }
    let mut eligible = Vec::new();
    for post in posts {
        if overlap_rate(&pair.target, post)?.value() < max_rate {
            eligible.push(post);
        }
    }
    if eligible.len() <= count {
        return Ok(eligible);
    }
    let mut rng = seed::rng(seed);
    Ok(eligible.choose_multiple(&mut rng, count).copied().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub positive_post_id: String,
    pub negative_post_id: String,
}

/// All `min(p, |positives|) × min(n, |negatives|)` triplets for one pair.
///
/// Sampling is seeded by `(config.seed, pair.id)` so results do not depend on
/// the order or thread in which pairs are processed.
pub fn generate_triplets(pair: &AnnotationPair, posts: &[QAPost], config: &TripletConfig) -> Result<Vec<Triplet>, TripletError> {
    let mut positives = find_positives(pair, posts, config.threshold)?;
    if positives.is_empty() {
        return Ok(Vec::new());
    }
    let pair_seed = seed::derive_seed(config.seed, &pair.id);
    if positives.len() > config.p {
        let mut rng = seed::rng(seed::derive_seed(pair_seed, "positives"));
        let mut idx: Vec<usize> = (0..positives.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(config.p);
        idx.sort_unstable();
        positives = idx.into_iter().map(|i| positives[i]).collect();
    }
    let negatives = find_negatives(pair, posts, config.max_rate, config.n, seed::derive_seed(pair_seed, "negatives"))?;
    let mut out = Vec::with_capacity(positives.len() * negatives.len());
    for pos in &positives {
        for neg in &negatives {
            out.push(Triplet {
                anchor: pair.annotation.clone(),
                positive: pos.title.clone(),
                negative: neg.title.clone(),
                positive_post_id: pos.id.clone(),
                negative_post_id: neg.id.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedTriplets {
    pub triplets: Vec<Triplet>,
    /// Ids of pairs without any positive post.
    pub discarded: Vec<String>,
}

/// Mines triplets for every pair. Output order follows `pairs`.
pub fn mine_triplets(pairs: &[AnnotationPair], posts: &[QAPost], config: &TripletConfig, exec: Exec) -> Result<MinedTriplets, TripletError> {
    let per_pair = exec.try_map(pairs, |pair| generate_triplets(pair, posts, config))?;
    let mut mined = MinedTriplets::default();
    for (pair, triplets) in pairs.iter().zip(per_pair) {
        if triplets.is_empty() {
            mined.discarded.push(pair.id.clone());
        }
        mined.triplets.extend(triplets);
    }
    Ok(mined)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub left: String,
    pub right: String,
    pub label: u8,
}

/// (anchor, positive, 1) and (anchor, negative, 0) per triplet, deduplicated
/// in first-seen order.
pub fn to_labeled_pairs(triplets: &[Triplet]) -> Vec<LabeledPair> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in triplets {
        for (right, label) in [(&t.positive, 1u8), (&t.negative, 0u8)] {
            let lp = LabeledPair { left: t.anchor.clone(), right: right.clone(), label };
            if seen.insert(lp.clone()) {
                out.push(lp);
            }
        }
    }
    out
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TripletError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TripletError::Parse { path: path.display().to_string(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<(), TripletError> {
    Ok(corpus::write_lines(path, triplets.iter().map(|t| serde_json::to_string(t).expect("triplet serializes")))?)
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>, TripletError> {
    load_jsonl(path)
}

pub fn write_labeled_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<(), TripletError> {
    Ok(corpus::write_lines(path, pairs.iter().map(|t| serde_json::to_string(t).expect("labeled pair serializes")))?)
}

pub fn load_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>, TripletError> {
    load_jsonl(path)
}
