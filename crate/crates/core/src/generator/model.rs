use std::path::Path;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::decode::StepModel;
use super::subtoken::SubtokenVocab;
use super::{ExpandedQuery, GeneratorConfig, GeneratorError, Result};
use crate::nn::{
    self, attention_bias, causal_bias, pad_batch, positional_encoding, Attention, CandleResult, FeedForward, Init, LayerNorm,
    ModelHeader, ParamStore,
};
use crate::seed;

const KIND: &str = "seq2seq-generator";

struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), c.d_model, rng)?,
            attn: Attention::new(store, &format!("{name}.attn"), c.d_model, c.heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), c.d_model, rng)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), c.d_model, c.ff_dim, rng)?,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor) -> CandleResult<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, &[bias])?)?;
        &x + self.ff.forward(&self.ln2.forward(&x)?)?
    }
}

struct Encoder {
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &GeneratorConfig, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), c.d_model, rng)?,
            self_attn: Attention::new(store, &format!("{name}.self"), c.d_model, c.heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), c.d_model, rng)?,
            cross_attn: Attention::new(store, &format!("{name}.cross"), c.d_model, c.heads, rng)?,
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), c.d_model, rng)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), c.d_model, c.ff_dim, rng)?,
        })
    }

    fn forward(&self, x: &Tensor, causal: &Tensor, k: &Tensor, v: &Tensor, memory_bias: &Tensor) -> CandleResult<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h, &[causal])?)?;
        let x = (&x + self.cross_attn.forward_projected(&self.ln2.forward(&x)?, k, v, &[memory_bias])?)?;
        &x + self.ff.forward(&self.ln3.forward(&x)?)?
    }
}

/// Encoded query channels, concatenated along the sequence axis in the order
/// annotation, title, API.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `(B, L, d_model)`
    pub memory: Tensor,
    /// `(B, L)` 0/1
    pub mask: Tensor,
    /// Per-channel sequence lengths (including each channel's start token).
    pub channel_lengths: [usize; 3],
}

impl Encoded {
    /// Feature matrix of the first query as host rows.
    pub fn features(&self) -> Result<Vec<Vec<f32>>> {
        Ok(self.memory.get(0)?.to_vec2()?)
    }
}

/// Three-channel transformer encoder with a transformer decoder. Token
/// embeddings are shared by all encoders and the decoder and tied to the
/// output projection.
pub struct Seq2SeqModel {
    config: GeneratorConfig,
    vocab: SubtokenVocab,
    store: ParamStore,
    tokens: Tensor,
    channels: Tensor,
    encoders: Vec<Encoder>,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
}

impl Seq2SeqModel {
    pub fn new(vocab: SubtokenVocab, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Self::with_store(vocab, config, ParamStore::new())
    }

    fn with_store(vocab: SubtokenVocab, config: GeneratorConfig, mut store: ParamStore) -> Result<Self> {
        let mut rng = seed::rng(seed::derive_seed(config.seed, "generator-init"));
        let d = config.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let tokens = store.get_or_init("tokens", &[vocab.len(), d], Init::Normal(std), &mut rng)?;
        let channels = store.get_or_init("channels", &[3, d], Init::Normal(0.02), &mut rng)?;
        let n_encoders = if config.share_encoders { 1 } else { 3 };
        let mut encoders = Vec::with_capacity(n_encoders);
        for e in 0..n_encoders {
            let layers = (0..config.encoder_layers)
                .map(|l| EncoderLayer::new(&mut store, &format!("enc{e}.{l}"), &config, &mut rng))
                .collect::<CandleResult<Vec<_>>>()?;
            let norm = LayerNorm::new(&mut store, &format!("enc{e}.norm"), d, &mut rng)?;
            encoders.push(Encoder { layers, norm });
        }
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayer::new(&mut store, &format!("dec.{l}"), &config, &mut rng))
            .collect::<CandleResult<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&mut store, "dec.norm", d, &mut rng)?;
        Ok(Self { config, vocab, store, tokens, channels, encoders, decoder, decoder_norm })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &SubtokenVocab {
        &self.vocab
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    fn header(&self) -> ModelHeader {
        ModelHeader::new(
            KIND,
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            serde_json::json!({ "vocab": self.vocab.tokens() }),
        )
    }

    pub fn fingerprint(&self) -> Result<String> {
        Ok(seed::sha256_hex(&nn::model_bytes(&self.header(), &self.store)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(nn::save_model(path, &self.header(), &self.store)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = nn::load_model(path, KIND)?;
        let corrupt = |e: serde_json::Error| GeneratorError::Container(nn::ContainerError::Corrupt(e.to_string()));
        let config: GeneratorConfig = serde_json::from_value(header.config).map_err(corrupt)?;
        let tokens: Vec<String> = serde_json::from_value(header.extra["vocab"].clone()).map_err(corrupt)?;
        Self::with_store(SubtokenVocab::from_tokens(tokens), config, store)
    }

    /// Scaled token embeddings plus sinusoidal positions, `(B, L, d)`.
    fn embed(&self, ids: &Tensor) -> CandleResult<Tensor> {
        let (b, l) = ids.dims2()?;
        let d = self.config.d_model;
        let e = self.tokens.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, d))?;
        (e * (d as f64).sqrt())?.broadcast_add(&positional_encoding(l, d)?)
    }

    pub(crate) fn encode_batch(&self, queries: &[&ExpandedQuery]) -> Result<Encoded> {
        for q in queries {
            q.check(self.config.max_len)?;
        }
        let mut memories = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        let mut channel_lengths = [0; 3];
        for c in 0..3 {
            let rows: Vec<Vec<u32>> = queries
                .iter()
                .map(|q| std::iter::once(SubtokenVocab::BOS_ID).chain(q.channels()[c].iter().copied()).collect())
                .collect();
            let refs: Vec<&[u32]> = rows.iter().map(Vec::as_slice).collect();
            let (ids, mask) = pad_batch(&refs, SubtokenVocab::PAD_ID)?;
            channel_lengths[c] = ids.dim(1)?;
            let mut x = self.embed(&ids)?.broadcast_add(&self.channels.get(c)?)?;
            let encoder = &self.encoders[if self.config.share_encoders { 0 } else { c }];
            let bias = attention_bias(&mask)?;
            for layer in &encoder.layers {
                x = layer.forward(&x, &bias)?;
            }
            memories.push(encoder.norm.forward(&x)?);
            masks.push(mask);
        }
        Ok(Encoded { memory: Tensor::cat(&memories, 1)?, mask: Tensor::cat(&masks, 1)?, channel_lengths })
    }

    /// Encoding of one query: the concatenated channel feature matrix.
    pub fn encode(&self, query: &ExpandedQuery) -> Result<Encoded> {
        self.encode_batch(&[query])
    }

    /// Hidden states `(B, T, d)` for decoder inputs given projected memory.
    fn decode_hidden(&self, inputs: &Tensor, kv: &[(Tensor, Tensor)], memory_bias: &Tensor) -> CandleResult<Tensor> {
        let t = inputs.dim(1)?;
        let causal = causal_bias(t)?;
        let mut x = self.embed(inputs)?;
        for (layer, (k, v)) in self.decoder.iter().zip(kv) {
            x = layer.forward(&x, &causal, k, v, memory_bias)?;
        }
        self.decoder_norm.forward(&x)
    }

    fn project_memory(&self, memory: &Tensor) -> CandleResult<Vec<(Tensor, Tensor)>> {
        self.decoder.iter().map(|l| l.cross_attn.project_kv(memory)).collect()
    }

    /// Output logits `(B, T, V)` under teacher forcing.
    pub(crate) fn forward_train(&self, queries: &[&ExpandedQuery], inputs: &Tensor) -> Result<Tensor> {
        let enc = self.encode_batch(queries)?;
        let kv = self.project_memory(&enc.memory)?;
        let h = self.decode_hidden(inputs, &kv, &attention_bias(&enc.mask)?)?;
        let (b, t, d) = h.dims3()?;
        Ok(h.reshape((b * t, d))?.matmul(&self.tokens.t()?)?.reshape((b, t, ()))?)
    }

    /// Prepares incremental decoding for one query; memory keys and values
    /// are projected once and reused for every step.
    pub fn decoder_for(&self, query: &ExpandedQuery, max_decode_steps: usize) -> Result<QueryDecoder<'_>> {
        let enc = self.encode(query)?;
        let kv = self.project_memory(&enc.memory)?;
        let memory_bias = attention_bias(&enc.mask)?;
        Ok(QueryDecoder { model: self, kv, memory_bias, max_decode_steps })
    }

    /// Next-token probabilities after `prefix`.
    pub fn step_distribution(&self, query: &ExpandedQuery, prefix: &[u32], max_decode_steps: usize) -> Result<Vec<f64>> {
        let dec = self.decoder_for(query, max_decode_steps)?;
        let row = dec.log_probs(&[prefix])?.pop().expect("one row");
        Ok(row.into_iter().map(f64::exp).collect())
    }
}

/// Step model bound to one encoded query.
pub struct QueryDecoder<'a> {
    model: &'a Seq2SeqModel,
    kv: Vec<(Tensor, Tensor)>,
    memory_bias: Tensor,
    max_decode_steps: usize,
}

impl StepModel for QueryDecoder<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn end_id(&self) -> u32 {
        SubtokenVocab::EOS_ID
    }

    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        if let Some(p) = prefixes.iter().find(|p| p.len() > self.max_decode_steps) {
            return Err(GeneratorError::PrefixTooLong { len: p.len(), max: self.max_decode_steps });
        }
        let rows: Vec<Vec<u32>> =
            prefixes.iter().map(|p| std::iter::once(SubtokenVocab::BOS_ID).chain(p.iter().copied()).collect()).collect();
        let refs: Vec<&[u32]> = rows.iter().map(Vec::as_slice).collect();
        let (ids, _) = pad_batch(&refs, SubtokenVocab::PAD_ID)?;
        let h = self.model.decode_hidden(&ids, &self.kv, &self.memory_bias)?;
        let d = self.model.config.d_model;
        // Right padding never leaks into earlier positions under the causal mask.
        let last: Vec<Tensor> = rows.iter().enumerate().map(|(i, r)| h.get(i)?.get(r.len() - 1)).collect::<CandleResult<_>>()?;
        let last = Tensor::stack(&last, 0)?.reshape((rows.len(), d))?;
        let logits: Vec<Vec<f32>> = last.matmul(&self.model.tokens.t()?)?.to_vec2()?;
        Ok(logits.into_iter().map(|row| log_softmax_f64(&row)).collect())
    }
}

fn log_softmax_f64(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x as f64 - lse).collect()
}
