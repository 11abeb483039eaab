//! Subtokens: the unit the generator reads and writes.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::{ApiCall, ApiSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    /// Natural language: lowercased alphanumeric words.
    Query,
    /// API renderings: split on whitespace and dots, the dot kept as a token.
    Api,
}

pub fn subtokenize(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Query => text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect(),
        TokenMode::Api => {
            let mut out = Vec::new();
            for word in text.split_whitespace() {
                let mut first = true;
                for part in word.split('.') {
                    if !first {
                        out.push(".".to_string());
                    }
                    first = false;
                    if !part.is_empty() {
                        out.push(part.to_string());
                    }
                }
            }
            out
        }
    }
}

/// API calls recovered from a subtoken stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Detokenized {
    pub sequence: ApiSequence,
    /// Maximal runs of tokens that did not form a `Class . method` triple.
    pub malformed_fragments: usize,
}

/// Rejoins `Class . method` triples; anything else is dropped and counted.
pub fn detokenize_apis<S: AsRef<str>>(subtokens: &[S]) -> Detokenized {
    let toks: Vec<&str> = subtokens.iter().map(AsRef::as_ref).collect();
    let mut calls = Vec::new();
    let mut malformed = 0;
    let mut in_bad_run = false;
    let mut i = 0;
    while i < toks.len() {
        let call = (i + 2 < toks.len() && toks[i + 1] == ".")
            .then(|| ApiCall::new(toks[i], toks[i + 2]).ok())
            .flatten();
        match call {
            Some(c) => {
                calls.push(c);
                in_bad_run = false;
                i += 3;
            }
            None => {
                if !in_bad_run {
                    malformed += 1;
                    in_bad_run = true;
                }
                i += 1;
            }
        }
    }
    if malformed > 0 {
        log::debug!("dropped {malformed} malformed API fragment(s)");
    }
    Detokenized { sequence: ApiSequence::new(calls), malformed_fragments: malformed }
}

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Token ↔ id map with reserved ids 0..4 for pad, start, end and unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl SubtokenVocab {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    /// Builds from a token stream; ids after the reserved block are assigned
    /// in lexicographic token order so the result is independent of input order.
    pub fn build<I, S>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
        let reserved = [PAD, BOS, EOS, UNK];
        let mut list: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        list.extend(
            counts
                .into_iter()
                .filter(|(t, c)| *c >= min_count.max(1) && !reserved.contains(&t.as_str()))
                .map(|(t, _)| t),
        );
        Self::from_tokens(list)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtokenize_examples() {
        assert_eq!(subtokenize("Float.parseFloat", TokenMode::Api), ["Float", ".", "parseFloat"]);
        assert_eq!(subtokenize("parse string to object", TokenMode::Query), ["parse", "string", "to", "object"]);
        assert_eq!(subtokenize("Parse, String-to Object!", TokenMode::Query), ["parse", "string", "to", "object"]);
        assert!(subtokenize("", TokenMode::Query).is_empty());
        assert!(subtokenize("", TokenMode::Api).is_empty());
    }

    #[test]
    fn detokenize_examples() {
        let d = detokenize_apis(&["Float", ".", "parseFloat"]);
        assert_eq!(d.sequence.render(), "Float.parseFloat");
        assert_eq!(d.malformed_fragments, 0);

        let d = detokenize_apis(&["Integer", ".", "parseInt", "Long", ".", "parseLong"]);
        assert_eq!(d.sequence.render(), "Integer.parseInt Long.parseLong");

        let d = detokenize_apis(&["parse"]);
        assert!(d.sequence.is_empty());
        assert_eq!(d.malformed_fragments, 1);

        let d = detokenize_apis(&[".", "A", ".", "b", "c", "d", "X", ".", "y", "."]);
        assert_eq!(d.sequence.render(), "A.b X.y");
        assert_eq!(d.malformed_fragments, 3);
    }

    #[test]
    fn worked_example_round_trip() {
        // Inverse check on the motivating APIs: split then rejoin.
        let apis = ["Integer.parseInt", "Long.parseLong", "Float.parseFloat", "Double.parseDouble"];
        let seq = ApiSequence::parse(&apis).unwrap();
        let toks = subtokenize(&seq.render(), TokenMode::Api);
        assert_eq!(toks.len(), 12);
        assert_eq!(detokenize_apis(&toks).sequence, seq);
    }

    #[test]
    fn vocab_reserved_ids_and_round_trip() {
        let v = SubtokenVocab::build(["b", "a", "a", ".", "<s>"], 1);
        assert_eq!(v.id(PAD), SubtokenVocab::PAD_ID);
        assert_eq!(v.id(BOS), SubtokenVocab::BOS_ID);
        assert_eq!(v.id(EOS), SubtokenVocab::EOS_ID);
        assert_eq!(v.id(UNK), SubtokenVocab::UNK_ID);
        assert_eq!(v.len(), 7);
        for t in ["a", "b", "."] {
            assert_eq!(v.token(v.id(t)), t);
        }
        assert_eq!(v.id("zzz"), SubtokenVocab::UNK_ID);
        assert_eq!(SubtokenVocab::build(["a", "b", "a"], 2).len(), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ident() -> impl Strategy<Value = String> {
            "[A-Za-z_][A-Za-z0-9_]{0,10}"
        }

        proptest! {
            #[test]
            fn detokenize_inverts_subtokenize(calls in proptest::collection::vec((ident(), ident()), 1..8)) {
                let seq: ApiSequence = calls.iter().map(|(c, m)| ApiCall::new(c.clone(), m.clone()).unwrap()).collect();
                let toks = subtokenize(&seq.render(), TokenMode::Api);
                let back = detokenize_apis(&toks);
                prop_assert_eq!(back.sequence, seq);
                prop_assert_eq!(back.malformed_fragments, 0);
            }
        }
    }
}
