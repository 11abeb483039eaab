use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::hash_files;
use super::{PipelineError, Result, RunConfig, RunManifest};
use crate::corpus::{self, AnnotationPair, ApiCall, ApiSequence, Ingest, QAPost};
use crate::generator::subtoken::{detokenize_apis, subtokenize, SubtokenVocab, TokenMode};
use crate::generator::{self, api_subtokens, beam_search, greedy_decode, ExpandedQuery, Seq2SeqModel, TrainExample, Variant};
use crate::linker::{self, categorize_link, Embedder, PairClassifier, PostIndex, TextEmbedder};
use crate::metrics::{self, bleu_tokens, BleuOptions, MannWhitney, MatchCategory, MatchDistribution};
use crate::seed;
use crate::triplets::{self, Triplet};

const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// What a stage did.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub cache_hit: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// One linked annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedRecord {
    pub split: String,
    pub pair_id: String,
    pub annotation: String,
    pub target: Vec<String>,
    pub post_id: String,
    pub title: String,
    pub answer_apis: Vec<String>,
    pub filter_similarity: f64,
    pub rerank_score: f64,
    pub category: MatchCategory,
}

/// Generator input for one annotation under one variant; unused channels are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedRecord {
    pub split: String,
    pub id: String,
    pub annotation: String,
    pub title: String,
    pub apis: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: Vec<String>,
    pub rendering: String,
    pub log_prob: f64,
    pub beam_size: usize,
    pub malformed_fragments: usize,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, serde_json::to_string_pretty(value).expect("serializes") + "\n").map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let lines: Vec<String> = rows.iter().map(|r| serde_json::to_string(r).expect("serializes")).collect();
    corpus::write_lines(path, lines).map_err(|e| PipelineError::data("write", e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(stage: &str, path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::data(stage, format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::data(stage, format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn params_hash<T: Serialize>(params: &T) -> String {
    seed::sha256_hex(&serde_json::to_vec(params).expect("params serialize"))
}

fn stage_inputs(stage: &str, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    for p in paths {
        if !p.exists() {
            return Err(PipelineError::data(stage, format!("missing input {}", p.display())));
        }
    }
    hash_files(paths)
}

/// Skips the stage when the manifest says it is fresh; otherwise runs it and
/// records its inputs and outputs.
fn cached_stage(
    cfg: &RunConfig,
    stage: &str,
    inputs: &[PathBuf],
    params: &str,
    run: impl FnOnce() -> Result<(Vec<PathBuf>, serde_json::Value)>,
) -> Result<StageOutcome> {
    let input_hashes = stage_inputs(stage, inputs)?;
    let mut manifest = RunManifest::load(&cfg.workdir)?;
    if manifest.is_fresh(stage, &input_hashes, params) {
        log::info!("{stage}: inputs unchanged, skipping");
        manifest.record_hit(stage);
        manifest.save(&cfg.workdir)?;
        let outputs = manifest.stages[stage].outputs.keys().map(PathBuf::from).collect();
        return Ok(StageOutcome { stage: stage.into(), cache_hit: true, outputs, summary: serde_json::Value::Null });
    }
    let (outputs, summary) = run()?;
    let mut manifest = RunManifest::load(&cfg.workdir)?;
    manifest.config_hash = cfg.hash();
    manifest.record(stage, params, input_hashes, &outputs)?;
    manifest.save(&cfg.workdir)?;
    Ok(StageOutcome { stage: stage.into(), cache_hit: false, outputs, summary })
}

fn ingest(cfg: &RunConfig) -> Ingest {
    if cfg.strict {
        Ingest::Strict
    } else {
        Ingest::Lenient
    }
}

fn load_posts(cfg: &RunConfig, stage: &str) -> Result<Vec<QAPost>> {
    corpus::load_posts(&cfg.posts, ingest(cfg)).map_err(|e| PipelineError::corpus(stage, e))
}

fn load_split(cfg: &RunConfig, stage: &str, name: &str) -> Result<Vec<AnnotationPair>> {
    corpus::load_pairs(&cfg.layout().split(name), Ingest::Strict).map_err(|e| PipelineError::corpus(stage, e))
}

/// Deduplicate, build the API vocabulary from posts, drop pairs with
/// out-of-vocabulary APIs, and split 8:1:1.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<StageOutcome> {
    const STAGE: &str = "prepare";
    let params = params_hash(&(cfg.min_frequency, cfg.split_seed, cfg.strict));
    cached_stage(cfg, STAGE, &[cfg.pairs.clone(), cfg.posts.clone()], &params, || {
        let err = |e| PipelineError::corpus(STAGE, e);
        let raw = corpus::load_pairs(&cfg.pairs, ingest(cfg)).map_err(err)?;
        let posts = load_posts(cfg, STAGE)?;
        let deduped = corpus::dedup_pairs(&raw);
        let vocab = corpus::build_vocabulary(&posts, cfg.min_frequency).map_err(err)?;
        let kept = corpus::filter_pairs(&deduped, &vocab);
        let split = corpus::split_corpus(&kept, cfg.split_seed).map_err(err)?;
        let layout = cfg.layout();
        for (name, pairs) in SPLITS.iter().zip([&split.train, &split.valid, &split.test]) {
            corpus::write_pairs(&layout.split(name), pairs).map_err(err)?;
        }
        vocab.write(&layout.api_vocab()).map_err(err)?;
        let summary = serde_json::json!({
            "pairs_read": raw.len(),
            "pairs_after_dedup": deduped.len(),
            "pairs_after_filter": kept.len(),
            "posts": posts.len(),
            "api_vocabulary": vocab.len(),
            "train": split.train.len(),
            "valid": split.valid.len(),
            "test": split.test.len(),
        });
        write_json(&layout.prepare_summary(), &summary)?;
        let mut outputs: Vec<PathBuf> = SPLITS.iter().map(|s| layout.split(s)).collect();
        outputs.push(layout.api_vocab());
        outputs.push(layout.prepare_summary());
        Ok((outputs, summary))
    })
}

/// Splits the training pairs 9:1 into a fitting part and a linker-internal
/// validation slice.
fn linker_holdout(train: &[AnnotationPair], seed_value: u64) -> (Vec<AnnotationPair>, Vec<AnnotationPair>) {
    use rand::seq::SliceRandom;
    let mut shuffled = train.to_vec();
    shuffled.shuffle(&mut seed::rng(seed::derive_seed(seed_value, "linker-holdout")));
    let n_valid = if train.len() >= 10 { train.len() / 10 } else { 0 };
    let valid = shuffled.split_off(train.len() - n_valid);
    (shuffled, valid)
}

/// Mines triplets from the training split, trains the filtering embedder and
/// the re-ranking classifier, and indexes every post title.
pub fn cmd_train_linker(cfg: &RunConfig) -> Result<StageOutcome> {
    const STAGE: &str = "train-linker";
    let layout = cfg.layout();
    let params = params_hash(&(cfg.triplet_config(), cfg.embedder_config(), cfg.classifier_config(), cfg.link_k, cfg.seed, cfg.strict));
    cached_stage(cfg, STAGE, &[layout.split("train"), cfg.posts.clone()], &params, || {
        let exec = cfg.exec();
        let train = load_split(cfg, STAGE, "train")?;
        let posts = load_posts(cfg, STAGE)?;
        let (fit, holdout) = linker_holdout(&train, cfg.seed);
        let tri_cfg = cfg.triplet_config();
        let mined = triplets::mine_triplets(&fit, &posts, &tri_cfg, exec).map_err(|e| PipelineError::triplets(STAGE, e))?;
        if mined.triplets.is_empty() {
            return Err(PipelineError::Training { stage: STAGE.into(), message: "no positive posts above threshold".into() });
        }
        let labeled = triplets::to_labeled_pairs(&mined.triplets);
        let tp = layout.linker("triplets.jsonl");
        let lp = layout.linker("labeled_pairs.jsonl");
        triplets::write_triplets(&tp, &mined.triplets).map_err(|e| PipelineError::triplets(STAGE, e))?;
        triplets::write_labeled_pairs(&lp, &labeled).map_err(|e| PipelineError::triplets(STAGE, e))?;

        let texts = fit.iter().map(|p| p.annotation.as_str()).chain(posts.iter().map(|p| p.title.as_str()));
        let vocab = linker::build_text_vocab(texts);
        let lerr = |e| PipelineError::linker(STAGE, e);
        log::info!("{STAGE}: {} triplets, {} labeled pairs, vocabulary {}", mined.triplets.len(), labeled.len(), vocab.len());
        let (embedder, emb_report) = linker::train_embedder(vocab.clone(), &mined.triplets, &cfg.embedder_config()).map_err(lerr)?;
        let (classifier, cls_report) = linker::train_classifier(vocab, &labeled, &cfg.classifier_config()).map_err(lerr)?;
        let index = PostIndex::build(&embedder, &posts, exec).map_err(lerr)?;

        let held = triplets::mine_triplets(&holdout, &posts, &tri_cfg, exec).map_err(|e| PipelineError::triplets(STAGE, e))?;
        let sep_triplets: &[Triplet] = if held.triplets.is_empty() { &mined.triplets } else { &held.triplets };
        let separation = linker::separation(&embedder, sep_triplets).map_err(lerr)?;
        let validation = if holdout.is_empty() || posts.is_empty() {
            None
        } else {
            let annotations: Vec<&str> = holdout.iter().map(|p| p.annotation.as_str()).collect();
            let linked = linker::link_all(&embedder, &classifier, &index, &posts, &annotations, cfg.link_k, exec).map_err(lerr)?;
            let cats: Vec<MatchCategory> = holdout.iter().zip(&linked).map(|(p, r)| categorize_link(&p.target, &r.post)).collect();
            Some(metrics::match_distribution(&cats).map_err(|e| PipelineError::data(STAGE, e))?)
        };

        let paths = [layout.linker("embedder.bin"), layout.linker("classifier.bin"), layout.linker("index.bin")];
        embedder.save(&paths[0]).map_err(lerr)?;
        classifier.save(&paths[1]).map_err(lerr)?;
        index.save(&paths[2]).map_err(lerr)?;
        let quality = serde_json::json!({
            "fit_pairs": fit.len(),
            "holdout_pairs": holdout.len(),
            "triplets": mined.triplets.len(),
            "pairs_without_positive": mined.discarded.len(),
            "labeled_pairs": labeled.len(),
            "separation_on": if held.triplets.is_empty() { "training triplets" } else { "holdout triplets" },
            "separation": separation,
            "separation_gap": separation.gap(),
            "embedder_epoch_losses": emb_report.epoch_losses,
            "classifier_epoch_losses": cls_report.epoch_losses,
            "classifier_train_accuracy": cls_report.train_accuracy,
            "holdout_match_distribution": validation,
            "embedder_hash": embedder.fingerprint(),
        });
        let qp = layout.linker("quality.json");
        write_json(&qp, &quality)?;
        let mut outputs = vec![tp, lp];
        outputs.extend(paths);
        outputs.push(qp);
        Ok((outputs, quality))
    })
}

/// Links every pair of every split to its top post and writes the expanded
/// dataset for all three variants.
pub fn cmd_link(cfg: &RunConfig) -> Result<StageOutcome> {
    const STAGE: &str = "link";
    let layout = cfg.layout();
    let mut inputs: Vec<PathBuf> = SPLITS.iter().map(|s| layout.split(s)).collect();
    inputs.extend([cfg.posts.clone(), layout.linker("embedder.bin"), layout.linker("classifier.bin"), layout.linker("index.bin")]);
    let params = params_hash(&(cfg.link_k, cfg.strict));
    cached_stage(cfg, STAGE, &inputs, &params, || {
        let lerr = |e| PipelineError::linker(STAGE, e);
        let posts = load_posts(cfg, STAGE)?;
        if posts.is_empty() {
            return Err(PipelineError::data(STAGE, "empty post index"));
        }
        let embedder = TextEmbedder::load(&layout.linker("embedder.bin")).map_err(lerr)?;
        let classifier = PairClassifier::load(&layout.linker("classifier.bin")).map_err(lerr)?;
        let index = PostIndex::load(&layout.linker("index.bin")).map_err(lerr)?;
        let mut linked = Vec::new();
        let mut per_split = BTreeMap::new();
        for split in SPLITS {
            let pairs = load_split(cfg, STAGE, split)?;
            let annotations: Vec<&str> = pairs.iter().map(|p| p.annotation.as_str()).collect();
            let ranked = linker::link_all(&embedder, &classifier, &index, &posts, &annotations, cfg.link_k, cfg.exec()).map_err(lerr)?;
            let mut cats = Vec::with_capacity(pairs.len());
            for (pair, r) in pairs.iter().zip(ranked) {
                let category = categorize_link(&pair.target, &r.post);
                cats.push(category);
                linked.push(LinkedRecord {
                    split: split.to_string(),
                    pair_id: pair.id.clone(),
                    annotation: pair.annotation.clone(),
                    target: pair.target.canonical_strings(),
                    post_id: r.post.id.clone(),
                    title: r.post.title.clone(),
                    answer_apis: r.post.answer_apis.iter().map(ApiCall::canonical).collect(),
                    filter_similarity: r.filter_similarity,
                    rerank_score: r.rerank_score.unwrap_or(0.0),
                    category,
                });
            }
            if !cats.is_empty() {
                per_split.insert(split, metrics::match_distribution(&cats).map_err(|e| PipelineError::data(STAGE, e))?);
            }
        }
        let mut outputs = vec![layout.linked()];
        write_jsonl(&layout.linked(), &linked)?;
        for variant in Variant::ALL {
            let rows: Vec<ExpandedRecord> = linked.iter().map(|r| expand(r, variant)).collect();
            write_jsonl(&layout.expanded(variant), &rows)?;
            outputs.push(layout.expanded(variant));
        }
        Ok((outputs, serde_json::json!({ "linked": linked.len(), "match_distribution": per_split, "embedder_hash": embedder.fingerprint() })))
    })
}

fn expand(r: &LinkedRecord, variant: Variant) -> ExpandedRecord {
    ExpandedRecord {
        split: r.split.clone(),
        id: r.pair_id.clone(),
        annotation: r.annotation.clone(),
        title: if variant.uses_title() { r.title.clone() } else { String::new() },
        apis: if variant.uses_apis() { r.answer_apis.clone() } else { Vec::new() },
        target: r.target.clone(),
    }
}

fn parse_apis(stage: &str, items: &[String]) -> Result<Vec<ApiCall>> {
    items.iter().map(|s| ApiCall::parse(s).map_err(|e| PipelineError::data(stage, e))).collect()
}

fn query_of(stage: &str, vocab: &SubtokenVocab, r: &ExpandedRecord, max_len: usize) -> Result<ExpandedQuery> {
    let apis = parse_apis(stage, &r.apis)?;
    Ok(ExpandedQuery::new(vocab, &r.annotation, &r.title, &apis, max_len))
}

/// Trains the generator for one variant on the training split.
pub fn cmd_train_generator(cfg: &RunConfig, variant: Variant) -> Result<StageOutcome> {
    let stage = format!("train-generator:{variant}");
    let layout = cfg.layout();
    let gen_cfg = cfg.generator_config();
    let params = params_hash(&gen_cfg);
    cached_stage(cfg, &stage, &[layout.expanded(variant)], &params, || {
        let records: Vec<ExpandedRecord> = read_jsonl(&stage, &layout.expanded(variant))?;
        let train: Vec<&ExpandedRecord> = records.iter().filter(|r| r.split == "train").collect();
        let mut tokens = Vec::new();
        for r in &train {
            tokens.extend(subtokenize(&r.annotation, TokenMode::Query));
            tokens.extend(subtokenize(&r.title, TokenMode::Query));
            tokens.extend(api_subtokens(&parse_apis(&stage, &r.apis)?));
            tokens.extend(api_subtokens(&parse_apis(&stage, &r.target)?));
        }
        let vocab = SubtokenVocab::build(tokens, 1);
        let examples = train
            .iter()
            .map(|r| {
                let target = api_subtokens(&parse_apis(&stage, &r.target)?);
                let target: Vec<u32> = vocab.encode(&target).into_iter().take(gen_cfg.max_len).collect();
                Ok(TrainExample { id: r.id.clone(), query: query_of(&stage, &vocab, r, gen_cfg.max_len)?, target })
            })
            .collect::<Result<Vec<_>>>()?;
        let dir = layout.generator_dir(variant);
        let checkpoints = dir.join("checkpoints");
        fs::create_dir_all(&checkpoints).map_err(io_err(&checkpoints))?;
        log::info!("{stage}: {} examples, vocabulary {}", examples.len(), vocab.len());
        let (model, report) =
            generator::train_generator(vocab, &examples, &gen_cfg, Some(&checkpoints)).map_err(|e| PipelineError::generator(&stage, e))?;
        let model_path = dir.join("model.bin");
        model.save(&model_path).map_err(|e| PipelineError::generator(&stage, e))?;
        let summary = serde_json::json!({
            "variant": variant,
            "examples": examples.len(),
            "vocabulary": model.vocab().len(),
            "parameters": model.num_parameters(),
            "epoch_losses": report.epoch_losses,
        });
        let report_path = dir.join("report.json");
        write_json(&report_path, &summary)?;
        Ok((vec![model_path, report_path], summary))
    })
}

/// Decodes the test split with beam search (or greedily).
pub fn cmd_predict(cfg: &RunConfig, variant: Variant, greedy: bool) -> Result<StageOutcome> {
    let stage = format!("predict:{variant}");
    let layout = cfg.layout();
    let search = cfg.generation_config();
    search.validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
    let model_path = layout.generator_dir(variant).join("model.bin");
    let params = params_hash(&(&search, greedy));
    cached_stage(cfg, &stage, &[model_path.clone(), layout.expanded(variant)], &params, || {
        let gerr = |e| PipelineError::generator(&stage, e);
        let model = Seq2SeqModel::load(&model_path).map_err(gerr)?;
        let records: Vec<ExpandedRecord> = read_jsonl(&stage, &layout.expanded(variant))?;
        let test: Vec<&ExpandedRecord> = records.iter().filter(|r| r.split == "test").collect();
        let max_len = model.config().max_len;
        let rows = cfg.exec().try_map(&test, |r| -> Result<PredictionRecord> {
            let query = query_of(&stage, model.vocab(), r, max_len)?;
            let decoder = model.decoder_for(&query, search.max_decode_steps).map_err(gerr)?;
            let best = if greedy {
                greedy_decode(&decoder, search.max_decode_steps).map_err(gerr)?
            } else {
                beam_search(&decoder, search.beam_size, search.max_decode_steps, search.length_penalty)
                    .map_err(gerr)?
                    .into_iter()
                    .next()
                    .expect("beam search returns at least one hypothesis")
            };
            let detok = detokenize_apis(&model.vocab().decode(best.output()));
            Ok(PredictionRecord {
                id: r.id.clone(),
                prediction: detok.sequence.canonical_strings(),
                rendering: detok.sequence.render(),
                log_prob: best.log_prob,
                beam_size: if greedy { 1 } else { search.beam_size },
                malformed_fragments: detok.malformed_fragments,
            })
        })?;
        let out = layout.predictions(variant);
        write_jsonl(&out, &rows)?;
        Ok((vec![out], serde_json::json!({ "variant": variant, "predictions": rows.len(), "greedy": greedy })))
    })
}

/// A prediction file to score, with its row label.
#[derive(Debug, Clone)]
pub struct EvalSource {
    pub name: String,
    pub path: PathBuf,
}

impl EvalSource {
    pub fn variant(cfg: &RunConfig, variant: Variant) -> Self {
        Self { name: variant.to_string(), path: cfg.layout().predictions(variant) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub examples: usize,
    /// Corpus-level cumulative BLEU-1..4.
    pub bleu: Vec<f64>,
    pub brevity_penalty: f64,
    pub mean_sentence_bleu4: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_example_bleu4: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub unit: metrics::BleuUnit,
    pub smoothing: bool,
    pub rows: Vec<EvalRow>,
    /// Mann-Whitney U over per-example BLEU-4 of the first two rows.
    pub comparison: Option<MannWhitney>,
}

impl EvaluationReport {
    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  BLEU-1   BLEU-2   BLEU-3   BLEU-4   precision  recall\n", "variant");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:.5}  {:.5}  {:.5}  {:.5}  {:.5}    {:.5}\n",
                r.name, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.precision, r.recall
            ));
        }
        if let Some(c) = &self.comparison {
            out.push_str(&format!("Mann-Whitney U = {:.1}, p = {:.3e} ({:?})\n", c.u, c.p_value, c.method));
        }
        out
    }
}

fn evaluate_source(cfg: &RunConfig, stage: &str, source: &EvalSource, test: &[AnnotationPair]) -> Result<EvalRow> {
    let preds: Vec<PredictionRecord> = read_jsonl(stage, &source.path)?;
    let by_id: BTreeMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let test_ids: BTreeSet<&str> = test.iter().map(|p| p.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = by_id.keys().copied().collect();
    if by_id.len() != preds.len() || pred_ids != test_ids {
        let missing = test_ids.difference(&pred_ids).count();
        let extra = pred_ids.difference(&test_ids).count();
        return Err(PipelineError::data(
            stage,
            format!("{}: predictions do not align with the test split ({missing} missing, {extra} unknown, {} rows)", source.path.display(), preds.len()),
        ));
    }
    let opts = BleuOptions { max_order: 4, smoothing: cfg.bleu_smoothing };
    let mut token_pairs = Vec::with_capacity(test.len());
    let mut pr = Vec::with_capacity(test.len());
    let mut per_example = BTreeMap::new();
    for pair in test {
        let p = by_id[pair.id.as_str()];
        let predicted = ApiSequence::new(parse_apis(stage, &p.prediction)?);
        let cand = bleu_tokens(&predicted, cfg.bleu_unit);
        let reference = bleu_tokens(&pair.target, cfg.bleu_unit);
        per_example.insert(pair.id.clone(), metrics::bleu(&cand, &reference, opts).bleu(4));
        pr.push(metrics::precision_recall(&predicted, &pair.target));
        token_pairs.push((cand, reference));
    }
    let corpus = metrics::corpus_bleu(&token_pairs, opts);
    let (precision, recall) = metrics::mean_precision_recall(&pr);
    let n = test.len().max(1) as f64;
    Ok(EvalRow {
        name: source.name.clone(),
        examples: test.len(),
        bleu: corpus.scores.clone(),
        brevity_penalty: corpus.brevity_penalty,
        mean_sentence_bleu4: per_example.values().sum::<f64>() / n,
        precision,
        recall,
        per_example_bleu4: per_example,
    })
}

/// Scores prediction files against the test split; with two or more
/// sources, the first two are compared with a Mann-Whitney U test.
pub fn cmd_evaluate(cfg: &RunConfig, sources: &[EvalSource]) -> Result<EvaluationReport> {
    const STAGE: &str = "evaluate";
    if sources.is_empty() {
        return Err(PipelineError::Usage("evaluate needs at least one prediction source".into()));
    }
    let test = load_split(cfg, STAGE, "test")?;
    if test.is_empty() {
        return Err(PipelineError::data(STAGE, "test split is empty"));
    }
    let rows = sources.iter().map(|s| evaluate_source(cfg, STAGE, s, &test)).collect::<Result<Vec<_>>>()?;
    let comparison = if rows.len() >= 2 {
        let a: Vec<f64> = rows[0].per_example_bleu4.values().copied().collect();
        let b: Vec<f64> = rows[1].per_example_bleu4.values().copied().collect();
        Some(metrics::mann_whitney_u(&a, &b).map_err(|e| PipelineError::data(STAGE, e))?)
    } else {
        None
    };
    let report = EvaluationReport { unit: cfg.bleu_unit, smoothing: cfg.bleu_smoothing, rows, comparison };
    let layout = cfg.layout();
    write_json(&layout.evaluate("report.json"), &report)?;
    let table_path = layout.evaluate("report.txt");
    fs::write(&table_path, report.table()).map_err(io_err(&table_path))?;
    let mut manifest = RunManifest::load(&cfg.workdir)?;
    let inputs = hash_files(&sources.iter().map(|s| s.path.clone()).chain([layout.split("test")]).collect::<Vec<_>>())?;
    manifest.record(STAGE, &params_hash(&(cfg.bleu_unit, cfg.bleu_smoothing)), inputs, &[layout.evaluate("report.json"), table_path])?;
    manifest.save(&cfg.workdir)?;
    Ok(report)
}

/// Match-category distribution of the linked posts, per split.
pub fn cmd_analyze_matches(cfg: &RunConfig) -> Result<BTreeMap<String, MatchDistribution>> {
    const STAGE: &str = "analyze-matches";
    let layout = cfg.layout();
    let linked: Vec<LinkedRecord> = read_jsonl(STAGE, &layout.linked())?;
    let mut by_split: BTreeMap<String, Vec<MatchCategory>> = BTreeMap::new();
    for r in &linked {
        by_split.entry(r.split.clone()).or_default().push(r.category);
        by_split.entry("all".into()).or_default().push(r.category);
    }
    let out = by_split
        .into_iter()
        .map(|(k, v)| Ok((k, metrics::match_distribution(&v).map_err(|e| PipelineError::data(STAGE, e))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    write_json(&layout.matches(), &out)?;
    Ok(out)
}

/// Every stage in order for the given variants, then one evaluation over
/// all of them.
pub fn run_all(cfg: &RunConfig, variants: &[Variant]) -> Result<EvaluationReport> {
    cmd_prepare(cfg)?;
    cmd_train_linker(cfg)?;
    cmd_link(cfg)?;
    for &v in variants {
        cmd_train_generator(cfg, v)?;
        cmd_predict(cfg, v, false)?;
    }
    let sources: Vec<EvalSource> = variants.iter().map(|&v| EvalSource::variant(cfg, v)).collect();
    cmd_evaluate(cfg, &sources)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_a_tenth_and_deterministic() {
        let pairs: Vec<AnnotationPair> = (0..50)
            .map(|i| AnnotationPair::new(format!("p{i}"), "do it", ApiSequence::parse(&["A.b"]).unwrap()).unwrap())
            .collect();
        let (fit, held) = linker_holdout(&pairs, 3);
        assert_eq!((fit.len(), held.len()), (45, 5));
        assert_eq!(linker_holdout(&pairs, 3).1, held);
        assert_eq!(linker_holdout(&pairs[..5], 3).1.len(), 0);
    }

    #[test]
    fn expansion_masks_channels() {
        let r = LinkedRecord {
            split: "test".into(),
            pair_id: "p".into(),
            annotation: "a".into(),
            target: vec!["A.b".into()],
            post_id: "q".into(),
            title: "t".into(),
            answer_apis: vec!["A.b".into()],
            filter_similarity: 0.5,
            rerank_score: 0.5,
            category: MatchCategory::AllMatch,
        };
        let base = expand(&r, Variant::AnnotationOnly);
        assert!(base.title.is_empty() && base.apis.is_empty());
        let title = expand(&r, Variant::PlusTitle);
        assert_eq!(title.title, "t");
        assert!(title.apis.is_empty());
        assert_eq!(expand(&r, Variant::PlusTitleApi).apis, ["A.b"]);
    }
}
