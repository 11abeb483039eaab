use std::collections::HashMap;
use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{encode_text, LinkerError, PairScorer, Result, TrainReport};
use crate::generator::subtoken::SubtokenVocab;
use crate::nn::{self, device, masked_mean, pad_batch, CandleResult, Init, Linear, ModelHeader, OptimConfig, ParamStore, Trainer};
use crate::seed;
use crate::triplets::LabeledPair;

const KIND: &str = "pair-classifier";

/// Kernel centres over token cosine similarity; the first is exact match.
const KERNEL_MU: [f32; 11] = [1.0, 0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9];
const KERNEL_SIGMA: f32 = 0.1;
const EXACT_SIGMA: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { dim: 32, hidden: 32, epochs: 8, learning_rate: 3e-3, batch_size: 64, max_tokens: 48, seed: 0 }
    }
}

/// Joint scorer over a text pair.
///
/// Features are soft-match counts from RBF kernels over the token-to-token
/// cosine matrix (log-summed over left tokens), plus the element-wise product
/// and absolute difference of the two mean-pooled texts. An MLP maps them to
/// a logit.
pub struct PairClassifier {
    config: ClassifierConfig,
    vocab: SubtokenVocab,
    store: ParamStore,
    table: Tensor,
    hidden: Linear,
    out: Linear,
    mus: Tensor,
    coefs: Tensor,
}

impl PairClassifier {
    pub fn new(vocab: SubtokenVocab, config: ClassifierConfig) -> Result<Self> {
        Self::with_store(vocab, config, ParamStore::new())
    }

    fn with_store(vocab: SubtokenVocab, config: ClassifierConfig, mut store: ParamStore) -> Result<Self> {
        let mut rng = seed::rng(seed::derive_seed(config.seed, "classifier-init"));
        let table = store.get_or_init("tokens", &[vocab.len(), config.dim], Init::Normal(0.5), &mut rng)?;
        let features = KERNEL_MU.len() + 2 * config.dim;
        let hidden = Linear::new(&mut store, "hidden", features, config.hidden, true, &mut rng)?;
        let out = Linear::new(&mut store, "out", config.hidden, 1, true, &mut rng)?;
        let k = KERNEL_MU.len();
        let coefs: Vec<f32> =
            (0..k).map(|i| if i == 0 { EXACT_SIGMA } else { KERNEL_SIGMA }).map(|s| -1.0 / (2.0 * s * s)).collect();
        let mus = Tensor::from_slice(&KERNEL_MU, (1, k, 1, 1), &device())?;
        let coefs = Tensor::from_vec(coefs, (1, k, 1, 1), &device())?;
        Ok(Self { config, vocab, store, table, hidden, out, mus, coefs })
    }

    fn header(&self) -> ModelHeader {
        ModelHeader::new(
            KIND,
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            serde_json::json!({ "vocab": self.vocab.tokens() }),
        )
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(nn::save_model(path, &self.header(), &self.store)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = nn::load_model(path, KIND)?;
        let config: ClassifierConfig =
            serde_json::from_value(header.config).map_err(|e| nn::ContainerError::Corrupt(e.to_string()))?;
        let tokens: Vec<String> =
            serde_json::from_value(header.extra["vocab"].clone()).map_err(|e| nn::ContainerError::Corrupt(e.to_string()))?;
        Self::with_store(SubtokenVocab::from_tokens(tokens), config, store)
    }

    /// Parameter hash; changes whenever any weight changes.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(seed::sha256_hex(&nn::model_bytes(&self.header(), &self.store)?))
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        encode_text(&self.vocab, text, self.config.max_tokens)
    }

    fn embed(&self, rows: &[&[u32]]) -> CandleResult<(Tensor, Tensor, Tensor)> {
        let (ids, mask) = pad_batch(rows, SubtokenVocab::PAD_ID)?;
        let (b, l) = ids.dims2()?;
        let e = self.table.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.config.dim))?;
        // Unknown tokens carry no lexical signal, so they are excluded from matching.
        let known: Vec<f32> = ids
            .flatten_all()?
            .to_vec1::<u32>()?
            .into_iter()
            .map(|id| if id == SubtokenVocab::PAD_ID || id == SubtokenVocab::UNK_ID { 0.0 } else { 1.0 })
            .collect();
        let known = Tensor::from_vec(known, (b, l), &device())?;
        Ok((e, mask, known))
    }

    /// Logits `(B,)` for aligned left/right rows.
    fn forward(&self, lefts: &[&[u32]], rights: &[&[u32]]) -> CandleResult<Tensor> {
        let (le, lmask, lknown) = self.embed(lefts)?;
        let (re, rmask, rknown) = self.embed(rights)?;
        let (b, ll, _) = le.dims3()?;
        let lr = re.dim(1)?;
        let unit = |x: &Tensor| -> CandleResult<Tensor> { x.broadcast_div(&(x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?) };
        let m = unit(&le)?.matmul(&unit(&re)?.transpose(1, 2)?.contiguous()?)?.unsqueeze(1)?;
        let k = m.broadcast_sub(&self.mus)?.sqr()?.broadcast_mul(&self.coefs)?.exp()?;
        let soft = k.broadcast_mul(&rknown.reshape((b, 1, 1, lr))?)?.sum(3)?;
        let per_token = (soft + 1.0)?.log()?.broadcast_mul(&lknown.reshape((b, 1, ll))?)?;
        let count = lmask.sum_keepdim(1)?.clamp(1.0, f64::MAX)?;
        let kernels = per_token.sum(2)?.broadcast_div(&count)?;

        let u = masked_mean(&le, &lmask)?;
        let v = masked_mean(&re, &rmask)?;
        let x = Tensor::cat(&[&kernels, &(&u * &v)?, &(&u - &v)?.abs()?], 1)?;
        self.out.forward(&self.hidden.forward(&x)?.tanh()?)?.squeeze(1)
    }
}

fn sigmoid(z: f32) -> f64 {
    1.0 / (1.0 + (-(z as f64)).exp())
}

impl PairScorer for PairClassifier {
    fn score_batch(&self, left: &str, rights: &[&str]) -> Result<Vec<f64>> {
        let l = self.encode(left);
        let mut out = Vec::with_capacity(rights.len());
        for chunk in rights.chunks(256) {
            let r: Vec<Vec<u32>> = chunk.iter().map(|t| self.encode(t)).collect();
            let lefts: Vec<&[u32]> = vec![l.as_slice(); chunk.len()];
            let rights: Vec<&[u32]> = r.iter().map(Vec::as_slice).collect();
            let logits: Vec<f32> = self.forward(&lefts, &rights)?.to_vec1()?;
            out.extend(logits.into_iter().map(sigmoid));
        }
        Ok(out)
    }
}

/// Binary cross-entropy training on labeled (annotation, title) pairs.
pub fn train_classifier(vocab: SubtokenVocab, pairs: &[LabeledPair], config: &ClassifierConfig) -> Result<(PairClassifier, TrainReport)> {
    let first = pairs.first().ok_or(LinkerError::EmptyTrainingSet)?.label;
    if pairs.iter().all(|p| p.label == first) {
        return Err(LinkerError::SingleClass(first));
    }
    let model = PairClassifier::new(vocab, config.clone())?;
    let mut report = TrainReport::default();

    let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
    for p in pairs {
        for text in [&p.left, &p.right] {
            cache.entry(text.as_str()).or_insert_with(|| model.encode(text));
        }
    }
    let mut trainer = Trainer::new(
        &model.store,
        OptimConfig { learning_rate: config.learning_rate, weight_decay: 0.0, clip_norm: Some(5.0), warmup_steps: 0 },
    )?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::derive_seed(config.seed, &format!("classifier-epoch-{epoch}"))));
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let lefts: Vec<&[u32]> = idx.iter().map(|&i| cache[pairs[i].left.as_str()].as_slice()).collect();
            let rights: Vec<&[u32]> = idx.iter().map(|&i| cache[pairs[i].right.as_str()].as_slice()).collect();
            let labels: Vec<f32> = idx.iter().map(|&i| pairs[i].label as f32).collect();
            let y = Tensor::from_vec(labels, idx.len(), &device())?;
            let z = model.forward(&lefts, &rights)?;
            // Stable BCE with logits: max(z,0) - z*y + log(1 + exp(-|z|)).
            let loss = ((z.relu()? - (&z * &y)?)? + (z.abs()?.neg()?.exp()? + 1.0)?.log()?)?.mean_all()?;
            let value = trainer.step(&loss).map_err(|e| LinkerError::NonFiniteLoss { epoch: epoch + 1, detail: e.to_string() })?;
            total += value as f64 * idx.len() as f64;
        }
        let mean = total / pairs.len() as f64;
        log::debug!("classifier epoch {} loss {mean:.5}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    report.train_accuracy = Some(accuracy(&model, pairs)?);
    Ok((model, report))
}

/// Fraction of pairs whose thresholded score (0.5) matches the label.
pub fn accuracy(model: &PairClassifier, pairs: &[LabeledPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in pairs.chunks(256) {
        let l: Vec<Vec<u32>> = chunk.iter().map(|p| model.encode(&p.left)).collect();
        let r: Vec<Vec<u32>> = chunk.iter().map(|p| model.encode(&p.right)).collect();
        let lefts: Vec<&[u32]> = l.iter().map(Vec::as_slice).collect();
        let rights: Vec<&[u32]> = r.iter().map(Vec::as_slice).collect();
        let logits: Vec<f32> = model.forward(&lefts, &rights)?.to_vec1()?;
        correct += logits.iter().zip(chunk).filter(|(z, p)| (sigmoid(**z) >= 0.5) == (p.label == 1)).count();
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::build_text_vocab;

    fn pair(l: &str, r: &str, label: u8) -> LabeledPair {
        LabeledPair { left: l.into(), right: r.into(), label }
    }

    fn toy() -> Vec<LabeledPair> {
        vec![
            pair("read file", "how to read a file", 1),
            pair("read file", "sort an array", 0),
            pair("sort list", "sort an array", 1),
            pair("sort list", "how to read a file", 0),
            pair("parse int", "parse integer string", 1),
            pair("parse int", "sort an array", 0),
        ]
    }

    fn vocab() -> SubtokenVocab {
        build_text_vocab(toy().iter().flat_map(|p| [p.left.as_str(), p.right.as_str()]))
    }

    #[test]
    fn single_class_is_rejected() {
        let pos: Vec<_> = toy().into_iter().filter(|p| p.label == 1).collect();
        assert!(matches!(train_classifier(vocab(), &pos, &ClassifierConfig::default()), Err(LinkerError::SingleClass(1))));
        assert!(matches!(train_classifier(vocab(), &[], &ClassifierConfig::default()), Err(LinkerError::EmptyTrainingSet)));
    }

    #[test]
    fn scores_are_probabilities_and_training_fits() {
        let cfg = ClassifierConfig { epochs: 60, batch_size: 6, ..Default::default() };
        let (model, report) = train_classifier(vocab(), &toy(), &cfg).unwrap();
        assert_eq!(report.train_accuracy, Some(1.0));
        let s = model.score_batch("read file", &["how to read a file", "sort an array", ""]).unwrap();
        assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(s[0] > s[1]);
        assert_eq!(s, model.score_batch("read file", &["how to read a file", "sort an array", ""]).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = ClassifierConfig { epochs: 1, ..Default::default() };
        let (model, _) = train_classifier(vocab(), &toy(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        model.save(&path).unwrap();
        let loaded = PairClassifier::load(&path).unwrap();
        assert_eq!(loaded.fingerprint().unwrap(), model.fingerprint().unwrap());
        assert_eq!(loaded.score_batch("sort list", &["sort an array"]).unwrap(), model.score_batch("sort list", &["sort an array"]).unwrap());
    }
}
