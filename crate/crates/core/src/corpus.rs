//! Annotation/API-sequence pairs, Q&A posts, the API vocabulary, and the
//! cleaning steps that turn raw records into a train/valid/test split.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed API identifier {0:?}")]
    MalformedApi(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("need at least 10 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("min_frequency must be at least 1")]
    ZeroMinFrequency,
    #[error("invalid record: {0}")]
    Invalid(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A `Class.method` identifier.
///
/// Ordering and equality follow the canonical rendering, so sorted sets of
/// calls are sorted lexicographically by their string form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ApiCall {
    class_name: String,
    method_name: String,
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && !s.contains('.') && !s.chars().any(char::is_whitespace)
}

impl ApiCall {
    pub fn new(class_name: impl Into<String>, method_name: impl Into<String>) -> Result<Self> {
        let class_name = class_name.into();
        let method_name = method_name.into();
        if !valid_ident(&class_name) || !valid_ident(&method_name) {
            return Err(CorpusError::MalformedApi(format!("{class_name}.{method_name}")));
        }
        Ok(Self { class_name, method_name })
    }

    /// Parses `pkg.Class.method` into `Class.method`, keeping only the last
    /// class component.
    pub fn parse(text: &str) -> Result<Self> {
        let malformed = || CorpusError::MalformedApi(text.to_string());
        let (prefix, method) = text.rsplit_once('.').ok_or_else(malformed)?;
        let class = prefix.rsplit('.').next().unwrap_or(prefix);
        ApiCall::new(class, method).map_err(|_| malformed())
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn method_name(&self) -> &str {
        &self.method_name
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class_name, self.method_name)
    }
}

impl Ord for ApiCall {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.class_name.bytes().chain(std::iter::once(b'.')).chain(self.method_name.bytes());
        let b = other.class_name.bytes().chain(std::iter::once(b'.')).chain(other.method_name.bytes());
        a.cmp(b)
    }
}

impl PartialOrd for ApiCall {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `parse_api_call` in free-function form.
pub fn parse_api_call(text: &str) -> Result<ApiCall> {
    ApiCall::parse(text)
}

/// Ordered API invocation chain. Repeats are allowed.
///
/// Ground-truth targets are never empty (enforced by [`AnnotationPair`]);
/// predicted sequences may be.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ApiSequence(Vec<ApiCall>);

impl ApiSequence {
    pub fn new(calls: Vec<ApiCall>) -> Self {
        Self(calls)
    }

    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        items.iter().map(|s| ApiCall::parse(s.as_ref())).collect::<Result<Vec<_>>>().map(Self)
    }

    pub fn calls(&self) -> &[ApiCall] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_set(&self) -> BTreeSet<ApiCall> {
        self.0.iter().cloned().collect()
    }

    /// Space-separated canonical rendering, e.g. `Integer.parseInt Long.parseLong`.
    pub fn render(&self) -> String {
        self.canonical_strings().join(" ")
    }

    pub fn canonical_strings(&self) -> Vec<String> {
        self.0.iter().map(ApiCall::canonical).collect()
    }
}

impl FromIterator<ApiCall> for ApiSequence {
    fn from_iter<I: IntoIterator<Item = ApiCall>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Collapses runs of whitespace to single spaces and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One annotation with its ground-truth API sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationPair {
    pub id: String,
    pub annotation: String,
    pub target: ApiSequence,
}

impl AnnotationPair {
    pub fn new(id: impl Into<String>, annotation: &str, target: ApiSequence) -> Result<Self> {
        let id = id.into();
        let annotation = normalize_whitespace(annotation);
        if id.trim().is_empty() {
            return Err(CorpusError::Invalid("empty id".into()));
        }
        if annotation.is_empty() {
            return Err(CorpusError::Invalid(format!("pair {id}: empty annotation")));
        }
        if target.is_empty() {
            return Err(CorpusError::Invalid(format!("pair {id}: empty target API sequence")));
        }
        Ok(Self { id, annotation, target })
    }
}

/// A Q&A post: title plus the APIs mentioned in its accepted answer, kept in
/// first-mention order without duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPost {
    pub id: String,
    pub title: String,
    pub answer_apis: IndexSet<ApiCall>,
}

impl QAPost {
    pub fn new(id: impl Into<String>, title: &str, apis: impl IntoIterator<Item = ApiCall>) -> Result<Self> {
        let id = id.into();
        let title = normalize_whitespace(title);
        if id.trim().is_empty() {
            return Err(CorpusError::Invalid("empty id".into()));
        }
        if title.is_empty() {
            return Err(CorpusError::Invalid(format!("post {id}: empty title")));
        }
        Ok(Self { id, title, answer_apis: apis.into_iter().collect() })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    id: String,
    annotation: String,
    apis: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PostRecord {
    id: String,
    title: String,
    answer_apis: Vec<String>,
}

/// Strict ingestion aborts on the first bad line; lenient skips and logs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ingest {
    #[default]
    Strict,
    Lenient,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn load_lines<T>(
    path: &Path,
    mode: Ingest,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
    id_of: impl Fn(&T) -> &str,
) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse(line).and_then(|rec| {
            if seen.insert(id_of(&rec).to_string()) {
                Ok(rec)
            } else {
                Err(format!("duplicate id {:?}", id_of(&rec)))
            }
        });
        match parsed {
            Ok(rec) => out.push(rec),
            Err(message) => {
                let err = CorpusError::Parse { path: path.to_path_buf(), line: idx + 1, message };
                match mode {
                    Ingest::Strict => return Err(err),
                    Ingest::Lenient => log::warn!("skipping record: {err}"),
                }
            }
        }
    }
    Ok(out)
}

fn parse_pair_line(line: &str) -> std::result::Result<AnnotationPair, String> {
    let rec: PairRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let target = ApiSequence::parse(&rec.apis).map_err(|e| e.to_string())?;
    AnnotationPair::new(rec.id, &rec.annotation, target).map_err(|e| e.to_string())
}

fn parse_post_line(line: &str) -> std::result::Result<QAPost, String> {
    let rec: PostRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let apis = rec.answer_apis.iter().map(|s| ApiCall::parse(s)).collect::<Result<Vec<_>>>().map_err(|e| e.to_string())?;
    QAPost::new(rec.id, &rec.title, apis).map_err(|e| e.to_string())
}

/// Loads a pairs file: one JSON object per line with `id`, `annotation`, `apis`.
pub fn load_pairs(path: &Path, mode: Ingest) -> Result<Vec<AnnotationPair>> {
    load_lines(path, mode, parse_pair_line, |p| &p.id)
}

/// Loads a posts file: one JSON object per line with `id`, `title`, `answer_apis`.
pub fn load_posts(path: &Path, mode: Ingest) -> Result<Vec<QAPost>> {
    load_lines(path, mode, parse_post_line, |p| &p.id)
}

pub fn pair_to_line(pair: &AnnotationPair) -> String {
    let rec = PairRecord { id: pair.id.clone(), annotation: pair.annotation.clone(), apis: pair.target.canonical_strings() };
    serde_json::to_string(&rec).expect("pair record serializes")
}

pub fn post_to_line(post: &QAPost) -> String {
    let rec = PostRecord {
        id: post.id.clone(),
        title: post.title.clone(),
        answer_apis: post.answer_apis.iter().map(ApiCall::canonical).collect(),
    };
    serde_json::to_string(&rec).expect("post record serializes")
}

pub(crate) fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_ref().as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_pairs(path: &Path, pairs: &[AnnotationPair]) -> Result<()> {
    write_lines(path, pairs.iter().map(pair_to_line))
}

pub fn write_posts(path: &Path, posts: &[QAPost]) -> Result<()> {
    write_lines(path, posts.iter().map(post_to_line))
}

/// APIs mentioned in at least `min_frequency` posts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiVocabulary {
    pub entries: BTreeSet<ApiCall>,
    pub min_frequency: usize,
}

impl ApiVocabulary {
    pub fn contains(&self, api: &ApiCall) -> bool {
        self.entries.contains(api)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one canonical API per line, sorted.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_lines(path, self.entries.iter().map(ApiCall::canonical))
    }

    pub fn load(path: &Path, min_frequency: usize) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut entries = BTreeSet::new();
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let api = ApiCall::parse(line.trim()).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.insert(api);
        }
        Ok(Self { entries, min_frequency })
    }
}

/// Counts each API once per post and keeps those reaching `min_frequency`.
pub fn build_vocabulary(posts: &[QAPost], min_frequency: usize) -> Result<ApiVocabulary> {
    if min_frequency == 0 {
        return Err(CorpusError::ZeroMinFrequency);
    }
    let mut counts: HashMap<&ApiCall, usize> = HashMap::new();
    for post in posts {
        for api in &post.answer_apis {
            *counts.entry(api).or_default() += 1;
        }
    }
    let entries = counts.into_iter().filter(|&(_, c)| c >= min_frequency).map(|(a, _)| a.clone()).collect();
    Ok(ApiVocabulary { entries, min_frequency })
}

/// Keeps the pairs whose whole target API set lies in the vocabulary.
pub fn filter_pairs(pairs: &[AnnotationPair], vocab: &ApiVocabulary) -> Vec<AnnotationPair> {
    pairs.iter().filter(|p| p.target.calls().iter().all(|a| vocab.contains(a))).cloned().collect()
}

/// Drops repeated (annotation, target) pairs, keeping the first occurrence.
pub fn dedup_pairs(pairs: &[AnnotationPair]) -> Vec<AnnotationPair> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert((p.annotation.clone(), p.target.render())))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<AnnotationPair>,
    pub valid: Vec<AnnotationPair>,
    pub test: Vec<AnnotationPair>,
    pub seed: u64,
}

/// Sizes of an 8:1:1 split of `n` items: valid and test are `n/10` rounded
/// half-up, train takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n + 5) / 10;
    (n - 2 * tenth, tenth, tenth)
}

/// Seeded uniform shuffle followed by an 8:1:1 partition.
pub fn split_corpus(pairs: &[AnnotationPair], seed: u64) -> Result<CorpusSplit> {
    if pairs.len() < 10 {
        return Err(CorpusError::TooFewPairs(pairs.len()));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut seed::rng(seed));
    let (n_train, n_valid, _) = split_sizes(pairs.len());
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(CorpusSplit { train: shuffled, valid, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn api(s: &str) -> ApiCall {
        ApiCall::parse(s).unwrap()
    }

    fn pair(id: &str, ann: &str, apis: &[&str]) -> AnnotationPair {
        AnnotationPair::new(id, ann, ApiSequence::parse(apis).unwrap()).unwrap()
    }

    fn post(id: &str, apis: &[&str]) -> QAPost {
        QAPost::new(id, "title", apis.iter().map(|s| api(s))).unwrap()
    }

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parse_api_call_examples() {
        let a = parse_api_call("Integer.parseInt").unwrap();
        assert_eq!((a.class_name(), a.method_name()), ("Integer", "parseInt"));
        assert_eq!(parse_api_call("java.lang.Float.parseFloat").unwrap().canonical(), "Float.parseFloat");
        assert!(matches!(parse_api_call("parseInt"), Err(CorpusError::MalformedApi(_))));
        for bad in ["Integer.", ".parseInt", "Inte ger.parseInt", "a..b", "Integer.parse Int"] {
            assert!(parse_api_call(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn package_stripping_matches_last_two_components() {
        // Independent route: split on every dot and keep the final two parts.
        for text in ["java.lang.Float.parseFloat", "a.b.c.D.e", "X.y", "org.Foo.bar"] {
            let parts: Vec<&str> = text.split('.').collect();
            let expected = format!("{}.{}", parts[parts.len() - 2], parts[parts.len() - 1]);
            assert_eq!(parse_api_call(text).unwrap().canonical(), expected);
        }
    }

    #[test]
    fn ordering_follows_canonical_string() {
        let mut calls = vec![api("A.b"), api("A-x.c"), api("AB.c"), api("A.a")];
        calls.sort();
        let mut strings: Vec<String> = calls.iter().map(ApiCall::canonical).collect();
        let rendered = strings.clone();
        strings.sort();
        assert_eq!(rendered, strings);
    }

    #[test]
    fn load_pairs_examples() {
        let f = tmp_file(concat!(
            r#"{"id":"1","annotation":"parse  string to object ","apis":["Integer.parseInt"]}"#,
            "\n",
            r#"{"id":"2","annotation":"read file","apis":["java.io.FileReader.read","BufferedReader.readLine"]}"#,
            "\n",
            r#"{"id":"3","annotation":"copy array","apis":["System.arraycopy"]}"#,
            "\n"
        ));
        let pairs = load_pairs(f.path(), Ingest::Strict).unwrap();
        assert_eq!(pairs.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
        assert_eq!(pairs[0].annotation, "parse string to object");
        assert_eq!(pairs[1].target.render(), "FileReader.read BufferedReader.readLine");

        let empty = tmp_file("");
        assert!(load_pairs(empty.path(), Ingest::Strict).unwrap().is_empty());
    }

    #[test]
    fn load_pairs_reports_line_of_bad_record() {
        let f = tmp_file(concat!(
            r#"{"id":"1","annotation":"ok","apis":["A.b"]}"#,
            "\n",
            r#"{"id":"2","annotation":"   ","apis":["A.b"]}"#,
            "\n"
        ));
        match load_pairs(f.path(), Ingest::Strict) {
            Err(CorpusError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("empty annotation"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let lenient = load_pairs(f.path(), Ingest::Lenient).unwrap();
        assert_eq!(lenient.len(), 1);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = tmp_file(concat!(
            r#"{"id":"1","annotation":"a","apis":["A.b"]}"#,
            "\n",
            r#"{"id":"1","annotation":"b","apis":["A.b"]}"#,
            "\n"
        ));
        assert!(matches!(load_pairs(f.path(), Ingest::Strict), Err(CorpusError::Parse { line: 2, .. })));
    }

    #[test]
    fn load_posts_examples() {
        let f = tmp_file(concat!(
            r#"{"id":"p1","title":"parse String containing a Number into a INT","answer_apis":["Integer.parseInt","Float.parseFloat"]}"#,
            "\n",
            r#"{"id":"p2","title":"dups","answer_apis":["Integer.parseInt","java.lang.Integer.parseInt","Long.parseLong"]}"#,
            "\n"
        ));
        let posts = load_posts(f.path(), Ingest::Strict).unwrap();
        assert_eq!(posts[0].answer_apis.len(), 2);
        assert_eq!(posts[1].answer_apis.len(), 2);

        let bad = tmp_file(r#"{"id":"p3","title":"","answer_apis":[]}"#);
        assert!(matches!(load_posts(bad.path(), Ingest::Strict), Err(CorpusError::Parse { line: 1, .. })));
    }

    #[test]
    fn records_round_trip_through_files() {
        let pairs = vec![pair("a", "parse string", &["Integer.parseInt", "Integer.parseInt"]), pair("b", "x y", &["A.b"])];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        write_pairs(&path, &pairs).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = load_pairs(&path, Ingest::Strict).unwrap();
        assert_eq!(loaded, pairs);
        write_pairs(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);

        let posts = vec![post("p", &["A.b", "C.d"])];
        let ppath = dir.path().join("posts.jsonl");
        write_posts(&ppath, &posts).unwrap();
        assert_eq!(load_posts(&ppath, Ingest::Strict).unwrap(), posts);
    }

    #[test]
    fn vocabulary_boundary_is_inclusive() {
        let mut posts: Vec<QAPost> = (0..5).map(|i| post(&format!("five{i}"), &["Five.api"])).collect();
        posts.extend((0..4).map(|i| post(&format!("four{i}"), &["Four.api", "Four.api"])));
        // Repeated mentions inside one post count once.
        posts.push(post("rep", &["Rep.api", "Rep.api", "Rep.api", "Rep.api", "Rep.api"]));
        let vocab = build_vocabulary(&posts, 5).unwrap();
        assert!(vocab.contains(&api("Five.api")));
        assert!(!vocab.contains(&api("Four.api")));
        assert!(!vocab.contains(&api("Rep.api")));
        assert!(matches!(build_vocabulary(&posts, 0), Err(CorpusError::ZeroMinFrequency)));
    }

    #[test]
    fn vocabulary_file_is_sorted() {
        let posts = vec![post("1", &["Zeta.a", "Alpha.b", "Mid.c"])];
        let vocab = build_vocabulary(&posts, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.write(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "Alpha.b\nMid.c\nZeta.a\n");
        assert_eq!(ApiVocabulary::load(&path, 1).unwrap().entries, vocab.entries);
    }

    #[test]
    fn filter_is_all_or_nothing() {
        let vocab = ApiVocabulary {
            entries: ["Integer.parseInt", "Long.parseLong", "Float.parseFloat", "Double.parseDouble"].iter().map(|s| api(s)).collect(),
            min_frequency: 5,
        };
        let full = pair("1", "a", &["Integer.parseInt", "Long.parseLong", "Float.parseFloat", "Double.parseDouble"]);
        let partial = pair("2", "b", &["Integer.parseInt", "Long.parseLong", "Float.parseFloat", "Short.parseShort"]);
        let kept = filter_pairs(&[full.clone(), partial], &vocab);
        assert_eq!(kept, vec![full.clone()]);
        let empty = ApiVocabulary { entries: BTreeSet::new(), min_frequency: 5 };
        assert!(filter_pairs(&[full], &empty).is_empty());
    }

    #[test]
    fn dedup_examples() {
        let a = pair("1", "read file", &["A.b"]);
        let a2 = pair("2", "read  file", &["A.b"]);
        let b = pair("3", "read file", &["C.d"]);
        assert_eq!(dedup_pairs(&[a.clone(), a2]), vec![a.clone()]);
        assert_eq!(dedup_pairs(&[a.clone(), b.clone()]), vec![a.clone(), b.clone()]);
        assert_eq!(dedup_pairs(&[b.clone(), a.clone()]), vec![b, a]);
    }

    fn numbered(n: usize) -> Vec<AnnotationPair> {
        (0..n).map(|i| pair(&format!("p{i}"), &format!("ann {i}"), &["A.b"])).collect()
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(100), (80, 10, 10));
        assert_eq!(split_sizes(196_276), (157_020, 19_628, 19_628));
        let s = split_corpus(&numbered(100), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        assert!(matches!(split_corpus(&numbered(9), 1), Err(CorpusError::TooFewPairs(9))));
    }

    #[test]
    fn split_is_seeded() {
        let pairs = numbered(50);
        let a = split_corpus(&pairs, 3).unwrap();
        assert_eq!(a, split_corpus(&pairs, 3).unwrap());
        let b = split_corpus(&pairs, 4).unwrap();
        assert_ne!(a.train, b.train);
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (b.train.len(), b.valid.len(), b.test.len()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_partitions_input(n in 10usize..300, seed in any::<u64>()) {
                let pairs = numbered(n);
                let s = split_corpus(&pairs, seed).unwrap();
                let (t, v, te) = split_sizes(n);
                prop_assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (t, v, te));
                let mut ids: Vec<&str> = s.train.iter().chain(&s.valid).chain(&s.test).map(|p| p.id.as_str()).collect();
                ids.sort();
                let mut expected: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
                expected.sort();
                prop_assert_eq!(ids, expected);
            }

            #[test]
            fn vocabulary_is_monotone(mentions in proptest::collection::vec(proptest::collection::vec(0u8..12, 0..6), 0..40), lo in 1usize..6, step in 0usize..4) {
                let posts: Vec<QAPost> = mentions.iter().enumerate().map(|(i, m)| {
                    QAPost::new(format!("p{i}"), "t", m.iter().map(|k| api(&format!("C{k}.m")))).unwrap()
                }).collect();
                let low = build_vocabulary(&posts, lo).unwrap();
                let high = build_vocabulary(&posts, lo + step).unwrap();
                prop_assert!(high.entries.is_subset(&low.entries));
            }

            #[test]
            fn filtered_targets_lie_in_vocab(targets in proptest::collection::vec(proptest::collection::vec(0u8..8, 1..5), 1..30), vocab_ids in proptest::collection::btree_set(0u8..8, 0..8)) {
                let pairs: Vec<AnnotationPair> = targets.iter().enumerate().map(|(i, t)| {
                    AnnotationPair::new(format!("p{i}"), "a", t.iter().map(|k| api(&format!("C{k}.m"))).collect()).unwrap()
                }).collect();
                let vocab = ApiVocabulary { entries: vocab_ids.iter().map(|k| api(&format!("C{k}.m"))).collect(), min_frequency: 1 };
                let kept = filter_pairs(&pairs, &vocab);
                for p in &kept {
                    prop_assert!(p.target.as_set().is_subset(&vocab.entries));
                }
                let expected = pairs.iter().filter(|p| p.target.as_set().is_subset(&vocab.entries)).count();
                prop_assert_eq!(kept.len(), expected);
            }
        }
    }
}
