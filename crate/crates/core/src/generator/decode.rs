use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Result;

/// Anything that yields next-token log-probabilities for a batch of prefixes.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn end_id(&self) -> u32;
    /// One row of `vocab_size` log-probabilities per prefix.
    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated ids, including the end token when finished.
    pub tokens: Vec<u32>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    fn root() -> Self {
        Self { tokens: Vec::new(), step_log_probs: Vec::new(), log_prob: 0.0, finished: false }
    }

    /// Tokens without the trailing end token.
    pub fn output(&self) -> &[u32] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn chain_probability(&self) -> f64 {
        self.log_prob.exp()
    }

    fn score(&self, length_penalty: Option<f64>) -> f64 {
        match length_penalty {
            Some(alpha) if !self.tokens.is_empty() => self.log_prob / (self.tokens.len() as f64).powf(alpha),
            _ => self.log_prob,
        }
    }
}

/// Log of the chain probability: the sum of per-step log-probabilities.
pub fn chain_log_prob(step_probs: &[f64]) -> f64 {
    step_probs.iter().map(|p| p.ln()).sum()
}

fn rank(a: &(f64, Vec<u32>), b: &(f64, Vec<u32>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Argmax decoding; ties go to the lowest id.
pub fn greedy_decode<M: StepModel + ?Sized>(model: &M, max_steps: usize) -> Result<BeamHypothesis> {
    let mut h = BeamHypothesis::root();
    let end = model.end_id();
    for _ in 0..max_steps {
        let lp = model.log_probs(&[&h.tokens])?.pop().expect("one row");
        let (best, &p) = lp.iter().enumerate().fold((0, &f64::NEG_INFINITY), |acc, (i, p)| if *p > *acc.1 { (i, p) } else { acc });
        h.tokens.push(best as u32);
        h.step_log_probs.push(p);
        h.log_prob += p;
        if best as u32 == end {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Beam search over cumulative log-probability.
///
/// Each step expands every active hypothesis by every token and ranks the
/// candidates (score descending, then token ids lexicographically). Finished
/// candidates ranked within the top `beam_size` are retired to the result
/// pool; the best unfinished ones form the next beam. Without a length
/// penalty the search stops once the pool is full and no active hypothesis
/// can beat its worst entry, since scores only decrease as tokens append.
pub fn beam_search<M: StepModel + ?Sized>(model: &M, beam_size: usize, max_steps: usize, length_penalty: Option<f64>) -> Result<Vec<BeamHypothesis>> {
    let beam_size = beam_size.max(1);
    let end = model.end_id();
    let mut active = vec![BeamHypothesis::root()];
    let mut pool: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..max_steps {
        let prefixes: Vec<&[u32]> = active.iter().map(|h| h.tokens.as_slice()).collect();
        let rows = model.log_probs(&prefixes)?;
        let mut candidates: Vec<(f64, Vec<u32>, usize, f64)> = Vec::with_capacity(active.len() * model.vocab_size());
        for (hi, (h, row)) in active.iter().zip(&rows).enumerate() {
            for (t, &lp) in row.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t as u32);
                candidates.push((h.log_prob + lp, tokens, hi, lp));
            }
        }
        let score_of = |c: &(f64, Vec<u32>, usize, f64)| match length_penalty {
            Some(alpha) => c.0 / (c.1.len() as f64).powf(alpha),
            None => c.0,
        };
        candidates.sort_by(|a, b| rank(&(score_of(a), a.1.clone()), &(score_of(b), b.1.clone())));

        let mut next = Vec::with_capacity(beam_size);
        for (r, (log_prob, tokens, hi, lp)) in candidates.into_iter().enumerate() {
            if r >= beam_size && next.len() >= beam_size {
                break;
            }
            let finished = *tokens.last().expect("non-empty") == end;
            let mut step_log_probs = active[hi].step_log_probs.clone();
            step_log_probs.push(lp);
            let h = BeamHypothesis { tokens, step_log_probs, log_prob, finished };
            if finished {
                if r < beam_size {
                    pool.push(h);
                }
            } else if next.len() < beam_size {
                next.push(h);
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }
        if length_penalty.is_none() && pool.len() >= beam_size {
            let best_active = active.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let mut pooled: Vec<f64> = pool.iter().map(|h| h.log_prob).collect();
            pooled.sort_by(|a, b| b.total_cmp(a));
            if best_active <= pooled[beam_size - 1] {
                active.clear();
                break;
            }
        }
    }
    pool.extend(active);
    pool.sort_by(|a, b| rank(&(a.score(length_penalty), a.tokens.clone()), &(b.score(length_penalty), b.tokens.clone())));
    pool.truncate(beam_size);
    Ok(pool)
}
