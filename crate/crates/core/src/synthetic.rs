//! Seeded synthetic corpora for tests, benchmarks and smoke runs.
//!
//! [`topic_corpus`] draws posts and annotations from disjoint topics with
//! their own words and APIs. [`ambiguous_corpus`] builds annotations that
//! name only an action, while the target APIs also depend on a class and an
//! API family that only the paired post's title (and answer) reveal.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotationPair, ApiCall, ApiSequence, QAPost};
use crate::seed;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub pairs: Vec<AnnotationPair>,
    pub posts: Vec<QAPost>,
    /// Generating group (topic or API set) of each pair and post id.
    pub groups: BTreeMap<String, usize>,
}

struct Topic {
    words: &'static [&'static str],
    class: &'static str,
    methods: &'static [&'static str],
}

const TOPICS: [Topic; 3] = [
    Topic {
        words: &["file", "read", "write", "directory", "path", "disk", "folder", "save", "load", "text", "lines", "append"],
        class: "Files",
        methods: &["readAllLines", "write", "createDirectory", "exists", "delete", "copy", "move", "size"],
    },
    Topic {
        words: &["http", "request", "socket", "server", "client", "url", "download", "connect", "port", "header", "response", "network"],
        class: "HttpClient",
        methods: &["send", "connect", "newBuilder", "timeout", "headers", "uri", "close", "version"],
    },
    Topic {
        words: &["sort", "list", "array", "element", "maximum", "minimum", "reverse", "shuffle", "search", "index", "sum", "collection"],
        class: "Collections",
        methods: &["sort", "reverse", "shuffle", "max", "min", "binarySearch", "swap", "fill"],
    },
];

fn phrase(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.random_range(3..=5);
    words.choose_multiple(rng, n).copied().collect::<Vec<_>>().join(" ")
}

fn topic_apis(rng: &mut ChaCha8Rng, topic: &Topic, n: usize) -> Vec<ApiCall> {
    let mut methods: Vec<&str> = topic.methods.choose_multiple(rng, n).copied().collect();
    methods.sort_unstable();
    methods.into_iter().map(|m| ApiCall::new(topic.class, m).expect("valid api")).collect()
}

/// Three disjoint topics; posts answer with 3 of their topic's 8 APIs and
/// annotations target 2. Groups are topic indices.
pub fn topic_corpus(posts_per_topic: usize, pairs_per_topic: usize, seed_value: u64) -> SyntheticCorpus {
    let mut rng = seed::rng(seed::derive_seed(seed_value, "topic-corpus"));
    let mut out = SyntheticCorpus { pairs: Vec::new(), posts: Vec::new(), groups: BTreeMap::new() };
    for (t, topic) in TOPICS.iter().enumerate() {
        for i in 0..posts_per_topic {
            let id = format!("post-{t}-{i:04}");
            let post = QAPost::new(id.clone(), &phrase(&mut rng, topic.words), topic_apis(&mut rng, topic, 3)).expect("valid post");
            out.groups.insert(id, t);
            out.posts.push(post);
        }
        for i in 0..pairs_per_topic {
            let id = format!("pair-{t}-{i:04}");
            let pair = AnnotationPair::new(id.clone(), &phrase(&mut rng, topic.words), ApiSequence::new(topic_apis(&mut rng, topic, 2)))
                .expect("valid pair");
            out.groups.insert(id, t);
            out.pairs.push(pair);
        }
    }
    out
}

const CLASSES: [&str; 20] = [
    "Buffer", "Channel", "Socket", "Stream", "Archive", "Ledger", "Matrix", "Packet", "Queue", "Record", "Sensor", "Session", "Signal",
    "Table", "Ticket", "Token", "Vault", "Widget", "Window", "Cursor",
];
const ACTIONS: [(&str, &[&str]); 5] = [
    ("read", &["read the contents of", "load data from", "fetch bytes out of"]),
    ("write", &["write data into", "store values in", "persist output to"]),
    ("open", &["open a handle on", "start using", "acquire access to"]),
    ("close", &["close the handle of", "release", "shut down"]),
    ("copy", &["copy everything from", "duplicate", "clone the state of"]),
];
/// Method infix and the title words that reveal the family.
const FAMILIES: [(&str, &[&str]); 2] = [("Sync", &["blocking", "synchronous"]), ("Async", &["nonblocking", "asynchronous"])];
const STEPS: [&str; 2] = ["Begin", "Finish"];
const SYLLABLES: [&str; 20] = ["ka", "lo", "mi", "nu", "pe", "ri", "so", "ta", "vi", "zu", "be", "do", "fa", "gi", "ho", "ju", "ke", "ly", "mo", "ne"];

/// Target of an ambiguous-corpus group `(class, action, family)`.
pub fn ambiguous_target(class: usize, action: usize, family: usize) -> ApiSequence {
    let name = |step: &str| format!("{}{}{}", ACTIONS[action].0, FAMILIES[family].0, step);
    ApiSequence::new(STEPS.iter().map(|s| ApiCall::new(CLASSES[class], name(s)).expect("valid api")).collect())
}

fn cue_word(index: usize) -> String {
    let mut n = index;
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    w.push_str(SYLLABLES[n % SYLLABLES.len()]);
    w
}

/// `n` entities, each one annotation pair and one post sharing a unique cue
/// word. The annotation states only the action; the title adds the API
/// family and, for about 60% of posts, the class. Answers mention exactly the
/// target APIs. Groups index the 200 `(class, action, family)` combinations.
pub fn ambiguous_corpus(n: usize, seed_value: u64) -> SyntheticCorpus {
    let mut rng = seed::rng(seed::derive_seed(seed_value, "ambiguous-corpus"));
    let combos = CLASSES.len() * ACTIONS.len() * FAMILIES.len();
    let mut cues: Vec<usize> = (0..SYLLABLES.len().pow(4)).collect();
    cues.shuffle(&mut rng);
    let mut out = SyntheticCorpus { pairs: Vec::new(), posts: Vec::new(), groups: BTreeMap::new() };
    for i in 0..n {
        let group = i % combos;
        let (class, action, family) = (group / (ACTIONS.len() * FAMILIES.len()), (group / FAMILIES.len()) % ACTIONS.len(), group % FAMILIES.len());
        let target = ambiguous_target(class, action, family);
        let cue = cue_word(cues[i]);
        let wording = ACTIONS[action].1.choose(&mut rng).expect("non-empty");
        let annotation = format!("{wording} {cue}");

        let mut title_words = vec![cue.clone(), ACTIONS[action].0.to_string(), FAMILIES[family].1.choose(&mut rng).expect("non-empty").to_string()];
        if rng.random_bool(0.6) {
            title_words.push(CLASSES[class].to_lowercase());
        }
        title_words[1..].shuffle(&mut rng);
        let title = title_words.join(" ");

        let pair_id = format!("pair-{i:05}");
        let post_id = format!("post-{i:05}");
        out.pairs.push(AnnotationPair::new(pair_id.clone(), &annotation, target.clone()).expect("valid pair"));
        out.posts.push(QAPost::new(post_id.clone(), &title, target.calls().iter().cloned()).expect("valid post"));
        out.groups.insert(pair_id, group);
        out.groups.insert(post_id, group);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, filter_pairs};

    #[test]
    fn topic_corpus_shape_and_determinism() {
        let a = topic_corpus(100, 40, 7);
        assert_eq!(a.posts.len(), 300);
        assert_eq!(a.pairs.len(), 120);
        let b = topic_corpus(100, 40, 7);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.posts, b.posts);
        for p in &a.posts {
            let t = a.groups[&p.id];
            assert!(p.answer_apis.iter().all(|api| api.class_name() == TOPICS[t].class));
        }
    }

    #[test]
    fn ambiguous_corpus_survives_cleaning() {
        let c = ambiguous_corpus(2200, 1);
        assert_eq!(c.pairs.len(), 2200);
        let vocab = build_vocabulary(&c.posts, 5).unwrap();
        assert_eq!(filter_pairs(&c.pairs, &vocab).len(), 2200);
        let cues: std::collections::BTreeSet<&str> = c.pairs.iter().map(|p| p.annotation.rsplit(' ').next().unwrap()).collect();
        assert_eq!(cues.len(), 2200);
        let p = &c.pairs[0];
        assert_eq!(p.target.len(), 2);
        assert!(!p.annotation.to_lowercase().contains(&CLASSES[0].to_lowercase()));
    }
}
