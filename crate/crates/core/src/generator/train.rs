use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::subtoken::SubtokenVocab;
use super::{ExpandedQuery, GeneratorConfig, GeneratorError, Result, Seq2SeqModel};
use crate::nn::{log_softmax, pad_batch, OptimConfig, Trainer};
use crate::seed;

/// A query and its target API subtoken ids (without start or end tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub id: String,
    pub query: ExpandedQuery,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub epoch_losses: Vec<f64>,
    /// Checkpoint files still on disk.
    pub checkpoints: Vec<String>,
}

fn validate(examples: &[TrainExample], config: &GeneratorConfig) -> Result<()> {
    if examples.is_empty() {
        return Err(GeneratorError::EmptyDataset);
    }
    for ex in examples {
        if ex.target.iter().all(|&t| t == SubtokenVocab::PAD_ID) {
            return Err(GeneratorError::EmptyTarget { record: ex.id.clone() });
        }
        if ex.target.len() > config.max_len {
            return Err(GeneratorError::ChannelOverflow { channel: "target", len: ex.target.len(), max: config.max_len });
        }
        ex.query.check(config.max_len)?;
    }
    Ok(())
}

/// Teacher-forced cross-entropy training.
///
/// With a checkpoint directory, the model is saved after every epoch as
/// `epoch-NNN.bin`, replacing the previous epoch's file.
pub fn train_generator(
    vocab: SubtokenVocab,
    examples: &[TrainExample],
    config: &GeneratorConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Seq2SeqModel, GeneratorReport)> {
    validate(examples, config)?;
    let model = Seq2SeqModel::new(vocab, config.clone())?;
    let mut report = GeneratorReport::default();
    if config.epochs == 0 {
        return Ok((model, report));
    }
    let mut trainer = Trainer::new(
        model.store(),
        OptimConfig {
            learning_rate: config.learning_rate,
            weight_decay: 0.0,
            clip_norm: Some(config.clip_norm),
            warmup_steps: config.warmup_steps,
        },
    )?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::derive_seed(config.seed, &format!("generator-epoch-{epoch}"))));
        let mut total = 0.0;
        let mut tokens = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&TrainExample> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, count) = batch_loss(&model, &batch)?;
            let value = trainer.step(&loss).map_err(|e| GeneratorError::NonFiniteLoss { epoch: epoch + 1, detail: e.to_string() })?;
            total += value as f64 * count as f64;
            tokens += count;
        }
        let mean = total / tokens as f64;
        log::info!("generator epoch {}/{} loss {mean:.4}", epoch + 1, config.epochs);
        report.epoch_losses.push(mean);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("epoch-{:03}.bin", epoch + 1));
            model.save(&path)?;
            if let Some(previous) = report.checkpoints.pop() {
                let _ = std::fs::remove_file(previous);
            }
            report.checkpoints.push(path.display().to_string());
        }
    }
    Ok((model, report))
}

/// Mean token cross-entropy of a batch and the number of scored tokens.
fn batch_loss(model: &Seq2SeqModel, batch: &[&TrainExample]) -> Result<(Tensor, usize)> {
    let inputs: Vec<Vec<u32>> =
        batch.iter().map(|ex| std::iter::once(SubtokenVocab::BOS_ID).chain(ex.target.iter().copied()).collect()).collect();
    let outputs: Vec<Vec<u32>> =
        batch.iter().map(|ex| ex.target.iter().copied().chain(std::iter::once(SubtokenVocab::EOS_ID)).collect()).collect();
    let (input_ids, _) = pad_batch(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>(), SubtokenVocab::PAD_ID)?;
    let (output_ids, mask) = pad_batch(&outputs.iter().map(Vec::as_slice).collect::<Vec<_>>(), SubtokenVocab::PAD_ID)?;
    let queries: Vec<&ExpandedQuery> = batch.iter().map(|ex| &ex.query).collect();
    let logits = model.forward_train(&queries, &input_ids)?;
    let picked = log_softmax(&logits)?.gather(&output_ids.unsqueeze(D::Minus1)?.contiguous()?, D::Minus1)?.squeeze(D::Minus1)?;
    let count: usize = outputs.iter().map(Vec::len).sum();
    let loss = ((picked * &mask)?.sum_all()? / -(count as f64))?;
    Ok((loss, count))
}

/// Teacher-forced mean token loss over a dataset without updating weights.
pub fn evaluate_loss(model: &Seq2SeqModel, examples: &[TrainExample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch: Vec<&TrainExample> = chunk.iter().collect();
        let (loss, count) = batch_loss(model, &batch)?;
        total += loss.to_scalar::<f32>()? as f64 * count as f64;
        tokens += count;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{greedy_decode, GenerationConfig};

    fn vocab() -> SubtokenVocab {
        SubtokenVocab::build((0..12).map(|i| format!("w{i:02}")), 1)
    }

    fn copy_task(n: usize, seed_value: u64) -> Vec<TrainExample> {
        use rand::Rng;
        let mut rng = seed::rng(seed_value);
        (0..n)
            .map(|i| {
                let len = rng.random_range(2..6);
                let t: Vec<u32> = (0..len).map(|_| rng.random_range(4..16)).collect();
                TrainExample { id: format!("ex{i}"), query: ExpandedQuery::from_ids(t.clone(), vec![], vec![]), target: t }
            })
            .collect()
    }

    fn small() -> GeneratorConfig {
        GeneratorConfig { d_model: 32, heads: 4, ff_dim: 64, encoder_layers: 1, decoder_layers: 2, max_len: 8, ..Default::default() }
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(matches!(train_generator(vocab(), &[], &small(), None), Err(GeneratorError::EmptyDataset)));
        let mut data = copy_task(3, 1);
        data[1].target = vec![SubtokenVocab::PAD_ID; 3];
        match train_generator(vocab(), &data, &small(), None) {
            Err(GeneratorError::EmptyTarget { record }) => assert_eq!(record, "ex1"),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
        data[1].target.clear();
        assert!(matches!(train_generator(vocab(), &data, &small(), None), Err(GeneratorError::EmptyTarget { .. })));
    }

    #[test]
    fn zero_epochs_writes_no_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { epochs: 0, ..small() };
        let (model, report) = train_generator(vocab(), &copy_task(4, 2), &cfg, Some(dir.path())).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert_eq!(model.fingerprint().unwrap(), Seq2SeqModel::new(vocab(), cfg).unwrap().fingerprint().unwrap());
    }

    #[test]
    fn loss_falls_and_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { epochs: 3, ..small() };
        let data = copy_task(16, 3);
        let (model, report) = train_generator(vocab(), &data, &cfg, Some(dir.path())).unwrap();
        assert_eq!(report.checkpoints.len(), 1);
        assert!(!dir.path().join("epoch-002.bin").exists());
        assert!(report.epoch_losses[2] < report.epoch_losses[0]);
        let loaded = Seq2SeqModel::load(&dir.path().join("epoch-003.bin")).unwrap();
        assert_eq!(loaded.fingerprint().unwrap(), model.fingerprint().unwrap());
        assert!(evaluate_loss(&model, &data, 4).unwrap().is_finite());
    }

    #[test]
    fn learns_small_copy_task() {
        let data = copy_task(20, 4);
        let cfg = GeneratorConfig { epochs: 40, batch_size: 4, ..small() };
        let (model, _) = train_generator(vocab(), &data, &cfg, None).unwrap();
        let gen = GenerationConfig { max_decode_steps: 8, ..Default::default() };
        let hits = data
            .iter()
            .filter(|ex| greedy_decode(&model.decoder_for(&ex.query, gen.max_decode_steps).unwrap(), gen.max_decode_steps).unwrap().output() == ex.target)
            .count();
        assert!(hits >= 18, "{hits}/20");
    }
}
