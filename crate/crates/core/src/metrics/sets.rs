use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{ApiCall, ApiSequence};

use super::MetricsError;

/// Set precision and recall of predicted APIs against the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRReport {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub target: usize,
}

pub fn precision_recall(predicted: &ApiSequence, target: &ApiSequence) -> PRReport {
    let pred = predicted.as_set();
    let gold = target.as_set();
    let tp = pred.intersection(&gold).count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    PRReport {
        precision: ratio(tp, pred.len()),
        recall: ratio(tp, gold.len()),
        true_positives: tp,
        predicted: pred.len(),
        target: gold.len(),
    }
}

/// Macro average of per-example precision and recall.
pub fn mean_precision_recall(reports: &[PRReport]) -> (f64, f64) {
    if reports.is_empty() {
        return (0.0, 0.0);
    }
    let n = reports.len() as f64;
    (reports.iter().map(|r| r.precision).sum::<f64>() / n, reports.iter().map(|r| r.recall).sum::<f64>() / n)
}

/// How much of a target API set a linked post's answer covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCategory {
    AllMatch,
    PartialMatch,
    NoMatch,
}

impl fmt::Display for MatchCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchCategory::AllMatch => "all_match",
            MatchCategory::PartialMatch => "partial_match",
            MatchCategory::NoMatch => "no_match",
        })
    }
}

pub fn categorize<'a>(target: &BTreeSet<ApiCall>, answer: impl IntoIterator<Item = &'a ApiCall>) -> MatchCategory {
    let answer: BTreeSet<&ApiCall> = answer.into_iter().collect();
    let hits = target.iter().filter(|a| answer.contains(a)).count();
    if hits == 0 {
        MatchCategory::NoMatch
    } else if hits == target.len() {
        MatchCategory::AllMatch
    } else {
        MatchCategory::PartialMatch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    pub all: usize,
    pub partial: usize,
    pub none: usize,
}

impl MatchDistribution {
    pub fn total(&self) -> usize {
        self.all + self.partial + self.none
    }

    /// (all, partial, none) fractions.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let t = self.total() as f64;
        (self.all as f64 / t, self.partial as f64 / t, self.none as f64 / t)
    }
}

pub fn match_distribution(categories: &[MatchCategory]) -> Result<MatchDistribution, MetricsError> {
    if categories.is_empty() {
        return Err(MetricsError::Empty("match categories"));
    }
    let count = |c| categories.iter().filter(|&&x| x == c).count();
    Ok(MatchDistribution {
        all: count(MatchCategory::AllMatch),
        partial: count(MatchCategory::PartialMatch),
        none: count(MatchCategory::NoMatch),
    })
}
