//! Sequential vs. rayon execution of the data-parallel hot loops.

use std::hint::black_box;

use apiseq::linker::{self, EmbedderConfig, PostIndex, TextEmbedder};
use apiseq::metrics::{self, BleuOptions, BleuUnit};
use apiseq::synthetic::topic_corpus;
use apiseq::triplets::{mine_triplets, TripletConfig};
use apiseq::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if Exec::default().is_parallel() {
        m.push(("parallel", Exec::default()));
    }
    m
}

fn triplet_mining(c: &mut Criterion) {
    let corpus = topic_corpus(300, 100, 1);
    let cfg = TripletConfig::default();
    let mut group = c.benchmark_group("mine_triplets");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(mine_triplets(&corpus.pairs, &corpus.posts, &cfg, exec).unwrap()))
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let corpus = topic_corpus(400, 40, 2);
    let texts = corpus.pairs.iter().map(|p| p.annotation.as_str()).chain(corpus.posts.iter().map(|p| p.title.as_str()));
    let embedder = TextEmbedder::new(linker::build_text_vocab(texts), EmbedderConfig::default()).unwrap();
    let index = PostIndex::build(&embedder, &corpus.posts, Exec::Sequential).unwrap();
    let annotations: Vec<&str> = corpus.pairs.iter().map(|p| p.annotation.as_str()).collect();

    let mut group = c.benchmark_group("retrieval");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::new("index_build", name), |b| {
            b.iter(|| black_box(PostIndex::build(&embedder, &corpus.posts, exec).unwrap()))
        });
        group.bench_function(BenchmarkId::new("filter_top_k", name), |b| {
            b.iter(|| {
                black_box(exec.try_map(&annotations, |a| linker::filter_top_k(&embedder, &index, &corpus.posts, a, 10)).unwrap())
            })
        });
    }
    group.finish();
}

fn sentence_bleu(c: &mut Criterion) {
    let corpus = topic_corpus(10, 2000, 3);
    let refs: Vec<Vec<String>> = corpus.pairs.iter().map(|p| metrics::bleu_tokens(&p.target, BleuUnit::Subtoken)).collect();
    let pairs: Vec<(&[String], &[String])> = refs.iter().zip(refs.iter().rev()).map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let opts = BleuOptions { max_order: 4, smoothing: false };
    let mut group = c.benchmark_group("sentence_bleu");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(exec.map(&pairs, |(c, r)| metrics::bleu(c, r, opts).bleu(4))))
        });
    }
    group.finish();
}

criterion_group!(benches, triplet_mining, retrieval, sentence_bleu);
criterion_main!(benches);
