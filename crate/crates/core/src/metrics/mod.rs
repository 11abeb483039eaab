//! Evaluation metrics: cumulative BLEU, API-set precision/recall, linked-post
//! match categories, and the Mann-Whitney U significance test.

mod bleu;
mod mwu;
mod sets;

pub use bleu::{
    bleu, brevity_penalty, corpus_bleu, mean_sentence_bleu, modified_precision, BleuOptions, BleuReport, BleuStats,
    Precision,
};
pub use mwu::{mann_whitney_u, MannWhitney, UMethod};
pub use sets::{
    categorize, match_distribution, mean_precision_recall, precision_recall, MatchCategory, MatchDistribution,
    PRReport,
};

use serde::{Deserialize, Serialize};

use crate::corpus::ApiSequence;
use crate::generator::subtoken::{subtokenize, TokenMode};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite score")]
    NonFinite,
}

/// Token unit used when scoring API sequences with BLEU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuUnit {
    /// `Float . parseFloat` counts as three tokens.
    #[default]
    Subtoken,
    /// Each `Class.method` call is one token.
    Call,
}

pub fn bleu_tokens(seq: &ApiSequence, unit: BleuUnit) -> Vec<String> {
    match unit {
        BleuUnit::Subtoken => subtokenize(&seq.render(), TokenMode::Api),
        BleuUnit::Call => seq.canonical_strings(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_tokenize_differently() {
        let s = ApiSequence::parse(&["Float.parseFloat", "Integer.parseInt"]).unwrap();
        assert_eq!(bleu_tokens(&s, BleuUnit::Subtoken), ["Float", ".", "parseFloat", "Integer", ".", "parseInt"]);
        assert_eq!(bleu_tokens(&s, BleuUnit::Call), ["Float.parseFloat", "Integer.parseInt"]);
    }
}
