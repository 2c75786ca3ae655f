//! Toy-scale pretraining loop over a sentence-split corpus.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::forward::encode;
use super::params::EncoderParams;
use super::train::{
    argmax, make_nsp_pairs, mask_for_mlm, mlm_logits, nsp_logits, step_with, Optimizer,
    OptimizerState, TrainingExample, CLIP_NORM,
};
use crate::error::{Error, Result};
use crate::subtok::{tokenize_pair, Encoding, Vocab};

/// A document is a list of sentences, a sentence a list of token texts.
pub type Document = Vec<Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop early once held-in accuracy reaches `(mlm, nsp)`.
    pub stop_at: Option<(f64, f64)>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            clip_norm: CLIP_NORM,
            seed: 0,
            stop_at: None,
        }
    }
}

/// One row of the metrics log. Losses and accuracies are averaged over the
/// epoch's training batches; `step` is the global step count at epoch end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub mlm_acc: f64,
    pub nsp_acc: f64,
}

/// Fixed NSP pairs, already framed and tokenized.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub encodings: Vec<Encoding>,
    pub is_next: Vec<bool>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.encodings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encodings.is_empty()
    }

    /// Draws fresh MLM masks for every pair.
    pub fn examples(&self, vocab_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingExample>> {
        self.encodings
            .iter()
            .zip(&self.is_next)
            .map(|(enc, &is_next)| {
                let masked =
                    mask_for_mlm(&enc.ids, &enc.alignment.special_mask(), vocab_size, rng)?;
                Ok(TrainingExample {
                    ids: masked.ids,
                    segments: enc.segments.clone(),
                    mlm_positions: masked.positions,
                    mlm_targets: masked.targets,
                    nsp_label: Some(is_next),
                })
            })
            .collect()
    }
}

/// Samples NSP pairs from `documents` and tokenizes them. Documents with
/// fewer than two sentences cannot form a pair and are skipped.
pub fn build_pairs(
    documents: &[Document],
    vocab: &Vocab,
    max_len: usize,
    seed: u64,
) -> Result<PairSet> {
    let usable: Vec<&Document> = documents.iter().filter(|d| d.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Empty("corpus has no document with two sentences".into()));
    }
    let skipped = documents.len() - usable.len();
    if skipped > 0 {
        log::warn!("skipping {skipped} documents with fewer than two sentences");
    }
    let docs: Vec<Document> = usable.into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = make_nsp_pairs(&docs, &mut rng)?;
    let mut set = PairSet {
        encodings: Vec::with_capacity(pairs.len()),
        is_next: Vec::with_capacity(pairs.len()),
    };
    for pair in pairs {
        let a = &docs[pair.first.document][pair.first.sentence];
        let b = &docs[pair.second.document][pair.second.sentence];
        set.encodings.push(tokenize_pair(a, b, vocab, max_len));
        set.is_next.push(pair.is_next);
    }
    Ok(set)
}

/// Held-in accuracy of the MLM head (over a fixed-seed masking) and the
/// NSP head.
pub fn evaluate(
    pairs: &PairSet,
    params: &EncoderParams,
    config: &EncoderConfig,
    mask_seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let examples = pairs.examples(config.vocab_size, &mut rng)?;
    let (mut mlm_hit, mut mlm_total, mut nsp_hit) = (0usize, 0usize, 0usize);
    for ex in &examples {
        let out = encode(&ex.ids, &ex.segments, params, config)?;
        let last = out.hidden_states.last().expect("hidden states");
        for (&p, &t) in ex.mlm_positions.iter().zip(&ex.mlm_targets) {
            mlm_total += 1;
            if argmax(mlm_logits(last.row(p), params).view()) == t as usize {
                mlm_hit += 1;
            }
        }
        let predicted_next = argmax(nsp_logits(out.pooled.view(), params).view()) == 0;
        if Some(predicted_next) == ex.nsp_label {
            nsp_hit += 1;
        }
    }
    Ok((
        mlm_hit as f64 / mlm_total.max(1) as f64,
        nsp_hit as f64 / examples.len().max(1) as f64,
    ))
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: EncoderParams,
    pub log: Vec<EpochMetrics>,
    pub pairs: PairSet,
}

/// Seed offsets so pair sampling, masking, shuffling and evaluation draw
/// from independent streams.
const PAIR_STREAM: u64 = 0x5041_4952;
const EVAL_STREAM: u64 = 0x4556_414c;

pub fn pretrain(
    documents: &[Document],
    vocab: &Vocab,
    config: &EncoderConfig,
    schedule: &Schedule,
) -> Result<PretrainOutput> {
    if documents.is_empty() {
        return Err(Error::Empty("pretraining corpus".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} pieces but config.vocab_size is {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let pairs = build_pairs(documents, vocab, config.max_seq_len, schedule.seed ^ PAIR_STREAM)?;
    let mut params = EncoderParams::init(config)?;
    let mut optimizer = OptimizerState::new(schedule.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(schedule.epochs);
    let mut step = 0;

    for epoch in 1..=schedule.epochs {
        let examples = pairs.examples(config.vocab_size, &mut rng)?;
        order.shuffle(&mut rng);
        let (mut mlm_loss, mut nsp_loss, mut batches) = (0.0, 0.0, 0usize);
        let (mut mlm_hit, mut mlm_total, mut nsp_hit, mut nsp_total) = (0, 0, 0, 0);
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let stats = step_with(
                &batch,
                &mut params,
                config,
                schedule.learning_rate,
                schedule.clip_norm,
                &mut optimizer,
            )?;
            step += 1;
            batches += 1;
            mlm_loss += stats.mlm_loss;
            nsp_loss += stats.nsp_loss;
            mlm_hit += stats.mlm_correct;
            mlm_total += stats.mlm_total;
            nsp_hit += stats.nsp_correct;
            nsp_total += stats.nsp_total;
        }
        let metrics = EpochMetrics {
            epoch,
            step,
            mlm_loss: mlm_loss / batches as f64,
            nsp_loss: nsp_loss / batches as f64,
            mlm_acc: mlm_hit as f64 / mlm_total.max(1) as f64,
            nsp_acc: nsp_hit as f64 / nsp_total.max(1) as f64,
        };
        log::info!(
            "epoch {epoch}: mlm loss {:.4} acc {:.3}, nsp loss {:.4} acc {:.3}",
            metrics.mlm_loss,
            metrics.mlm_acc,
            metrics.nsp_loss,
            metrics.nsp_acc
        );
        log.push(metrics);
        if let Some((mlm_target, nsp_target)) = schedule.stop_at {
            // cheap running accuracies gate the full held-in evaluation
            if metrics.mlm_acc >= mlm_target && metrics.nsp_acc >= nsp_target {
                let (mlm, nsp) = evaluate(&pairs, &params, config, schedule.seed ^ EVAL_STREAM)?;
                if mlm >= mlm_target && nsp >= nsp_target {
                    break;
                }
            }
        }
    }
    Ok(PretrainOutput { params, log, pairs })
}

/// Held-in accuracies with the masking seed `pretrain` uses for early stopping.
pub fn evaluate_held_in(
    output: &PretrainOutput,
    config: &EncoderConfig,
    schedule: &Schedule,
) -> Result<(f64, f64)> {
    evaluate(&output.pairs, &output.params, config, schedule.seed ^ EVAL_STREAM)
}

pub fn write_metrics_csv<W: Write>(mut out: W, log: &[EpochMetrics]) -> io::Result<()> {
    writeln!(out, "epoch,step,mlm_loss,nsp_loss,mlm_acc,nsp_acc")?;
    for m in log {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?}",
            m.epoch, m.step, m.mlm_loss, m.nsp_loss, m.mlm_acc, m.nsp_acc
        )?;
    }
    Ok(())
}
