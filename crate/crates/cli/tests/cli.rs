use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use apiseq::corpus::{self, AnnotationPair, ApiCall, ApiSequence, QAPost};
use apiseq::synthetic::topic_corpus;

fn apiseq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apiseq")).current_dir(dir).env("RUST_LOG", "warn").args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
pairs = \"data/pairs.jsonl\"
posts = \"data/posts.jsonl\"
workdir = \"work\"
min_frequency = 2
embedder_dim = 16
embedder_hidden = 16
embedder_epochs = 2
classifier_dim = 8
classifier_hidden = 8
classifier_epochs = 2
d_model = 16
heads = 2
ff_dim = 32
encoder_layers = 1
decoder_layers = 1
epochs = 2
max_len = 24
max_decode_steps = 10
beam_size = 1
";

fn write_fixture(dir: &Path, pairs: &[AnnotationPair], posts: &[QAPost]) {
    corpus::write_pairs(&dir.join("data/pairs.jsonl"), pairs).unwrap();
    corpus::write_posts(&dir.join("data/posts.jsonl"), posts).unwrap();
    fs::write(dir.join("run.toml"), TINY).unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(apiseq(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(apiseq(dir.path(), &["prepare", "--variant", "both"]).status.code(), Some(1));
    fs::write(dir.path().join("bad.toml"), "unknown_key = 3\n").unwrap();
    let o = apiseq(dir.path(), &["show-config", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown_key"));
    assert_eq!(apiseq(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn show_config_prints_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let o = apiseq(dir.path(), &["show-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in ["link_k = 10", "beam_size = 5", "decoder_layers = 6", "epochs = 30", "triplet_threshold = 0.75", "variant = \"plus_title_api\""] {
        assert!(text.contains(line), "missing {line} in\n{text}");
    }
    let o = apiseq(dir.path(), &["show-config", "--seed", "9", "--strict", "--variant", "plus_title"]);
    let text = stdout(&o);
    assert!(text.contains("seed = 9") && text.contains("strict = true") && text.contains("variant = \"plus_title\""));
}

#[test]
fn missing_posts_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let c = topic_corpus(5, 5, 1);
    write_fixture(dir.path(), &c.pairs, &c.posts);
    fs::remove_file(dir.path().join("data/posts.jsonl")).unwrap();
    let o = apiseq(dir.path(), &["prepare", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("posts.jsonl"), "{}", stderr(&o));
}

#[test]
fn no_positive_posts_is_a_training_failure() {
    let dir = tempfile::tempdir().unwrap();
    let target = ApiSequence::parse(&["A.a", "B.b", "C.c", "D.d"]).unwrap();
    let pairs: Vec<AnnotationPair> = (0..20).map(|i| AnnotationPair::new(format!("p{i}"), &format!("do thing {i}"), target.clone()).unwrap()).collect();
    let posts: Vec<QAPost> = target
        .calls()
        .iter()
        .flat_map(|c| (0..3).map(move |j| QAPost::new(format!("{c}-{j}"), "single api", [c.clone(), ApiCall::parse("Z.z").unwrap()]).unwrap()))
        .collect();
    write_fixture(dir.path(), &pairs, &posts);
    assert!(apiseq(dir.path(), &["prepare", "--config", "run.toml"]).status.success());
    let o = apiseq(dir.path(), &["train-linker", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no positive posts above threshold"), "{}", stderr(&o));
}

#[test]
fn end_to_end_on_a_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let c = topic_corpus(20, 20, 4);
    write_fixture(dir.path(), &c.pairs, &c.posts);
    let cfg = ["--config", "run.toml"];
    let step = |args: &[&str]| {
        let all: Vec<&str> = args.iter().chain(cfg.iter()).copied().collect();
        let o = apiseq(dir.path(), &all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };

    assert!(step(&["prepare"]).contains("\"cache_hit\": false"));
    assert!(step(&["prepare"]).contains("\"cache_hit\": true"));
    step(&["train-linker"]);
    step(&["link"]);
    let work = dir.path().join("work");
    let base = fs::read_to_string(work.join("link/expanded-annotation_only.jsonl")).unwrap();
    assert!(base.lines().all(|l| l.contains("\"title\":\"\"") && l.contains("\"apis\":[]")));

    for v in ["annotation_only", "plus_title_api"] {
        step(&["train-generator", "--variant", v]);
        step(&["predict", "--variant", v]);
    }
    let beam_one = fs::read(work.join("predict/plus_title_api.jsonl")).unwrap();
    step(&["predict", "--variant", "plus_title_api", "--greedy"]);
    assert_eq!(fs::read(work.join("predict/plus_title_api.jsonl")).unwrap(), beam_one);

    let table = step(&["evaluate", "--variant", "annotation_only", "--variant", "plus_title_api"]);
    assert!(table.contains("annotation_only") && table.contains("plus_title_api") && table.contains("Mann-Whitney"), "{table}");
    assert!(work.join("evaluate/report.json").exists());
    step(&["analyze-matches"]);
    assert!(work.join("analyze/matches.json").exists());

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"nope\",\"prediction\":[],\"rendering\":\"\",\"log_prob\":0.0,\"beam_size\":1,\"malformed_fragments\":0}\n").unwrap();
    let o = apiseq(dir.path(), &["evaluate", "--predictions", "bad=bad.jsonl", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("align"), "{}", stderr(&o));

    let manifest = fs::read_to_string(work.join("manifest.json")).unwrap();
    for stage in ["prepare", "train-linker", "link", "train-generator:plus_title_api", "predict:plus_title_api", "evaluate"] {
        assert!(manifest.contains(&format!("\"{stage}\"")), "manifest lacks {stage}");
    }
}
