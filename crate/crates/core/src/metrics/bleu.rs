//! Cumulative BLEU with brevity penalty.
//!
//! Sentence and corpus scores share one path: n-gram match statistics are
//! accumulated first, then turned into a score. Corpus BLEU sums the
//! statistics over all pairs before taking the geometric mean.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

/// Clipped n-gram matches over candidate n-grams for one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Precision {
    pub clipped: u64,
    pub total: u64,
}

impl Precision {
    /// 0 when the candidate has no n-grams of this order.
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.clipped as f64 / self.total as f64
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Σ min(count_cand(g), count_ref(g)) over Σ count_cand(g).
pub fn modified_precision<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Precision {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let mut p = Precision::default();
    for (gram, &c) in &cand {
        p.clipped += c.min(refc.get(gram).copied().unwrap_or(0));
        p.total += c;
    }
    p
}

/// 1 when c ≥ r, exp(1 − r/c) when 0 < c < r, and 0 for an empty candidate.
pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_order: usize,
    /// Add-one smoothing on orders ≥ 2. Off by default.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self { max_order: 4, smoothing: false }
    }
}

/// Sufficient statistics for BLEU; additive across sentence pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub precisions: Vec<Precision>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn from_pair<T: Eq + Hash>(candidate: &[T], reference: &[T], max_order: usize) -> Self {
        Self {
            precisions: (1..=max_order).map(|n| modified_precision(candidate, reference, n)).collect(),
            candidate_len: candidate.len(),
            reference_len: reference.len(),
        }
    }

    pub fn merge(&mut self, other: &BleuStats) {
        if self.precisions.len() < other.precisions.len() {
            self.precisions.resize(other.precisions.len(), Precision::default());
        }
        for (a, b) in self.precisions.iter_mut().zip(&other.precisions) {
            a.clipped += b.clipped;
            a.total += b.total;
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn report(&self, smoothing: bool) -> BleuReport {
        let bp = brevity_penalty(self.candidate_len, self.reference_len);
        let mut log_sum = 0.0;
        let mut zero = false;
        let mut scores = Vec::with_capacity(self.precisions.len());
        let mut precisions = Vec::with_capacity(self.precisions.len());
        for (i, p) in self.precisions.iter().enumerate() {
            let order = i + 1;
            let value = if smoothing && order > 1 {
                (p.clipped as f64 + 1.0) / (p.total as f64 + 1.0)
            } else {
                p.value()
            };
            precisions.push(value);
            if value == 0.0 {
                zero = true;
            } else {
                log_sum += value.ln();
            }
            scores.push(if zero || bp == 0.0 { 0.0 } else { bp * (log_sum / order as f64).exp() });
        }
        BleuReport {
            scores,
            precisions,
            brevity_penalty: bp,
            candidate_len: self.candidate_len,
            reference_len: self.reference_len,
        }
    }
}

/// Cumulative BLEU-1..N for one candidate, or aggregated over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// `scores[k-1]` is cumulative BLEU-k with uniform weights 1/k.
    pub scores: Vec<f64>,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuReport {
    /// Cumulative BLEU of order `n` (1-based).
    pub fn bleu(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }
}

pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], opts: BleuOptions) -> BleuReport {
    BleuStats::from_pair(candidate, reference, opts.max_order).report(opts.smoothing)
}

pub fn corpus_bleu<T: Eq + Hash, C: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(C, R)], opts: BleuOptions) -> BleuReport {
    let mut total = BleuStats { precisions: vec![Precision::default(); opts.max_order], ..Default::default() };
    for (c, r) in pairs {
        total.merge(&BleuStats::from_pair(c.as_ref(), r.as_ref(), opts.max_order));
    }
    total.report(opts.smoothing)
}

/// Arithmetic mean of sentence-level scores per order.
pub fn mean_sentence_bleu<T: Eq + Hash, C: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(C, R)], opts: BleuOptions) -> Vec<f64> {
    let mut sums = vec![0.0; opts.max_order];
    for (c, r) in pairs {
        let rep = bleu(c.as_ref(), r.as_ref(), opts);
        for (s, v) in sums.iter_mut().zip(&rep.scores) {
            *s += v;
        }
    }
    let n = pairs.len().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}
