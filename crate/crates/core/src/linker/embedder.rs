use std::collections::HashMap;
use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{encode_text, Embedder, EmbeddingVector, LinkerError, Result, TrainReport};
use crate::generator::subtoken::SubtokenVocab;
use crate::nn::{self, masked_mean, pad_batch, CandleResult, Init, Linear, ModelHeader, OptimConfig, ParamStore, Trainer};
use crate::seed;
use crate::triplets::Triplet;

const KIND: &str = "text-embedder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub hidden: usize,
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { dim: 64, hidden: 128, margin: 0.3, epochs: 8, learning_rate: 3e-3, batch_size: 32, max_tokens: 48, seed: 0 }
    }
}

/// Bag-of-tokens encoder: mean-pooled token embeddings refined by a residual
/// feed-forward block, then L2-normalized.
pub struct TextEmbedder {
    config: EmbedderConfig,
    vocab: SubtokenVocab,
    store: ParamStore,
    table: Tensor,
    ff1: Linear,
    ff2: Linear,
    fingerprint: String,
}

impl TextEmbedder {
    pub fn new(vocab: SubtokenVocab, config: EmbedderConfig) -> Result<Self> {
        Self::with_store(vocab, config, ParamStore::new())
    }

    fn with_store(vocab: SubtokenVocab, config: EmbedderConfig, mut store: ParamStore) -> Result<Self> {
        let mut rng = seed::rng(seed::derive_seed(config.seed, "embedder-init"));
        let table = store.get_or_init("tokens", &[vocab.len(), config.dim], Init::Normal(0.5), &mut rng)?;
        let ff1 = Linear::new(&mut store, "ff1", config.dim, config.hidden, true, &mut rng)?;
        let ff2 = Linear::new(&mut store, "ff2", config.hidden, config.dim, true, &mut rng)?;
        let mut model = Self { config, vocab, store, table, ff1, ff2, fingerprint: String::new() };
        model.refresh_fingerprint()?;
        Ok(model)
    }

    fn header(&self) -> ModelHeader {
        ModelHeader::new(
            KIND,
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            serde_json::json!({ "vocab": self.vocab.tokens() }),
        )
    }

    fn refresh_fingerprint(&mut self) -> Result<()> {
        self.fingerprint = seed::sha256_hex(&nn::model_bytes(&self.header(), &self.store)?);
        Ok(())
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &SubtokenVocab {
        &self.vocab
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(nn::save_model(path, &self.header(), &self.store)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = nn::load_model(path, KIND)?;
        let config: EmbedderConfig = serde_json::from_value(header.config).map_err(|e| nn::ContainerError::Corrupt(e.to_string()))?;
        let tokens: Vec<String> =
            serde_json::from_value(header.extra["vocab"].clone()).map_err(|e| nn::ContainerError::Corrupt(e.to_string()))?;
        Self::with_store(SubtokenVocab::from_tokens(tokens), config, store)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        encode_text(&self.vocab, text, self.config.max_tokens)
    }

    /// `(B, D)` unit rows.
    fn forward(&self, rows: &[&[u32]]) -> CandleResult<Tensor> {
        let (ids, mask) = pad_batch(rows, SubtokenVocab::PAD_ID)?;
        let (b, l) = ids.dims2()?;
        let e = self.table.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.config.dim))?;
        let pooled = masked_mean(&e, &mask)?;
        let h = (&pooled + self.ff2.forward(&self.ff1.forward(&pooled)?.tanh()?)?)?;
        let norm = (h.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
        h.broadcast_div(&norm)
    }
}

impl Embedder for TextEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(256) {
            let ids: Vec<Vec<u32>> = chunk.iter().map(|t| self.encode(t)).collect();
            let rows: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
            let m: Vec<Vec<f32>> = self.forward(&rows)?.to_vec2()?;
            out.extend(m.into_iter().map(EmbeddingVector));
        }
        Ok(out)
    }
}

/// Trains on triplets with the loss `max(0, m - cos(a,p) + cos(a,n))`.
pub fn train_embedder(vocab: SubtokenVocab, triplets: &[Triplet], config: &EmbedderConfig) -> Result<(TextEmbedder, TrainReport)> {
    if triplets.is_empty() {
        return Err(LinkerError::EmptyTrainingSet);
    }
    let mut model = TextEmbedder::new(vocab, config.clone())?;
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((model, report));
    }

    let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
    for t in triplets {
        for text in [&t.anchor, &t.positive, &t.negative] {
            cache.entry(text.as_str()).or_insert_with(|| model.encode(text));
        }
    }
    let mut trainer = Trainer::new(
        &model.store,
        OptimConfig { learning_rate: config.learning_rate, weight_decay: 0.0, clip_norm: Some(5.0), warmup_steps: 0 },
    )?;
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::derive_seed(config.seed, &format!("embedder-epoch-{epoch}"))));
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let mut rows: Vec<&[u32]> = Vec::with_capacity(idx.len() * 3);
            rows.extend(idx.iter().map(|&i| cache[triplets[i].anchor.as_str()].as_slice()));
            rows.extend(idx.iter().map(|&i| cache[triplets[i].positive.as_str()].as_slice()));
            rows.extend(idx.iter().map(|&i| cache[triplets[i].negative.as_str()].as_slice()));
            let n = idx.len();
            let h = model.forward(&rows)?;
            let (a, p, ng) = (h.narrow(0, 0, n)?, h.narrow(0, n, n)?, h.narrow(0, 2 * n, n)?);
            let cos_ap = (&a * &p)?.sum(1)?;
            let cos_an = (&a * &ng)?.sum(1)?;
            let loss = ((cos_an - cos_ap)? + config.margin)?.relu()?.mean_all()?;
            let value = trainer.step(&loss).map_err(|e| LinkerError::NonFiniteLoss { epoch: epoch + 1, detail: e.to_string() })?;
            total += value as f64 * n as f64;
        }
        let mean = total / triplets.len() as f64;
        log::debug!("embedder epoch {} loss {mean:.5}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    model.refresh_fingerprint()?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::{build_text_vocab, cosine_similarity, separation};

    fn triplet(a: &str, p: &str, n: &str) -> Triplet {
        Triplet { anchor: a.into(), positive: p.into(), negative: n.into(), positive_post_id: String::new(), negative_post_id: String::new() }
    }

    fn toy() -> Vec<Triplet> {
        vec![
            triplet("read a file", "how to read file contents", "parse integer from string"),
            triplet("convert string to int", "parse integer from string", "how to read file contents"),
            triplet("open file for reading", "how to read file contents", "sort a list"),
            triplet("sort numbers", "sort a list", "parse integer from string"),
        ]
    }

    fn vocab_of(ts: &[Triplet]) -> SubtokenVocab {
        build_text_vocab(ts.iter().flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()]))
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let model = TextEmbedder::new(vocab_of(&toy()), EmbedderConfig::default()).unwrap();
        let a = model.embed("read a file").unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(a, model.embed("read a file").unwrap());
        assert_eq!(model.embed("").unwrap().dim(), 64);
        assert!(cosine_similarity(&a, &model.embed("sort numbers").unwrap()) < 1.0);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = EmbedderConfig { epochs: 0, ..Default::default() };
        let (trained, report) = train_embedder(vocab_of(&toy()), &toy(), &cfg).unwrap();
        let fresh = TextEmbedder::new(vocab_of(&toy()), cfg).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(trained.fingerprint(), fresh.fingerprint());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(train_embedder(vocab_of(&toy()), &[], &EmbedderConfig::default()), Err(LinkerError::EmptyTrainingSet)));
    }

    #[test]
    fn training_lowers_loss_and_separates() {
        let cfg = EmbedderConfig { epochs: 30, batch_size: 4, ..Default::default() };
        let (model, report) = train_embedder(vocab_of(&toy()), &toy(), &cfg).unwrap();
        assert!(report.epoch_losses.last().unwrap() <= &report.epoch_losses[0]);
        let sep = separation(&model, &toy()).unwrap();
        assert!(sep.gap() > 0.1, "{sep:?}");
    }

    #[test]
    fn save_load_preserves_fingerprint_and_outputs() {
        let cfg = EmbedderConfig { epochs: 2, ..Default::default() };
        let (model, _) = train_embedder(vocab_of(&toy()), &toy(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        model.save(&path).unwrap();
        let loaded = TextEmbedder::load(&path).unwrap();
        assert_eq!(loaded.fingerprint(), model.fingerprint());
        assert_eq!(loaded.fingerprint(), seed::sha256_hex(&std::fs::read(&path).unwrap()));
        assert_eq!(loaded.embed("sort numbers").unwrap(), model.embed("sort numbers").unwrap());
    }
}
