//! Pretraining objectives: MLM masking, NSP pair sampling, the combined
//! loss with its gradients, and the parameter update.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::backward::{backward, outer_add};
use super::config::EncoderConfig;
use super::forward::{encode, forward, ForwardOutput};
use super::params::EncoderParams;
use crate::error::{Error, Result};
use crate::subtok::{MASK_ID, NUM_RESERVED};

pub const SELECT_PROB: f64 = 0.15;
pub const MASK_PROB: f64 = 0.8;
pub const RANDOM_PROB: f64 = 0.1;
pub const NEGATIVE_PROB: f64 = 0.5;
pub const CLIP_NORM: f64 = 1.0;

/// What happened to a position selected for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskBranch {
    /// Replaced by `[MASK]`.
    Mask,
    /// Replaced by a random non-reserved id.
    Random,
    /// Left as is.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
    pub branches: Vec<MaskBranch>,
}

fn sample_branch<R: Rng + ?Sized>(rng: &mut R) -> MaskBranch {
    let r: f64 = rng.random();
    if r < MASK_PROB {
        MaskBranch::Mask
    } else if r < MASK_PROB + RANDOM_PROB {
        MaskBranch::Random
    } else {
        MaskBranch::Keep
    }
}

fn random_id<R: Rng + ?Sized>(vocab_size: usize, rng: &mut R) -> u32 {
    if vocab_size > NUM_RESERVED {
        rng.random_range(NUM_RESERVED..vocab_size) as u32
    } else {
        rng.random_range(0..vocab_size) as u32
    }
}

/// Selects about 15% of the non-special positions and corrupts them with
/// the 80/10/10 mask/random/keep scheme.
pub fn mask_for_mlm<R: Rng + ?Sized>(
    ids: &[u32],
    special_mask: &[bool],
    vocab_size: usize,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if special_mask.len() != ids.len() {
        return Err(Error::Shape(format!(
            "special mask has {} entries for {} ids",
            special_mask.len(),
            ids.len()
        )));
    }
    if special_mask.iter().all(|&s| s) {
        return Err(Error::NothingToMask);
    }
    let mut selections = Vec::new();
    for (i, &special) in special_mask.iter().enumerate() {
        if !special && rng.random_bool(SELECT_PROB) {
            selections.push((i, sample_branch(rng)));
        }
    }
    Ok(apply_masking(ids, &selections, vocab_size, rng))
}

/// Applies explicit `(position, branch)` selections.
pub fn apply_masking<R: Rng + ?Sized>(
    ids: &[u32],
    selections: &[(usize, MaskBranch)],
    vocab_size: usize,
    rng: &mut R,
) -> MaskedSequence {
    let mut masked = ids.to_vec();
    let mut out = MaskedSequence {
        ids: Vec::new(),
        positions: Vec::with_capacity(selections.len()),
        targets: Vec::with_capacity(selections.len()),
        branches: Vec::with_capacity(selections.len()),
    };
    for &(pos, branch) in selections {
        out.positions.push(pos);
        out.targets.push(ids[pos]);
        out.branches.push(branch);
        match branch {
            MaskBranch::Mask => masked[pos] = MASK_ID,
            MaskBranch::Random => masked[pos] = random_id(vocab_size, rng),
            MaskBranch::Keep => {}
        }
    }
    out.ids = masked;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceRef {
    pub document: usize,
    pub sentence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentencePair {
    pub first: SentenceRef,
    pub second: SentenceRef,
    pub is_next: bool,
}

/// Which branch to take for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NspChoice {
    IsNext,
    NotNext,
}

/// One pair per consecutive sentence position; half of the second
/// sentences are swapped for a sentence from another document.
pub fn make_nsp_pairs<T: PartialEq, R: Rng + ?Sized>(
    documents: &[Vec<T>],
    rng: &mut R,
) -> Result<Vec<SentencePair>> {
    if documents.len() < 2 {
        return Err(Error::NoNegatives(format!(
            "need at least 2 documents, got {}",
            documents.len()
        )));
    }
    if let Some(d) = documents.iter().position(|d| d.len() < 2) {
        return Err(Error::NoNegatives(format!(
            "document {d} has fewer than 2 sentences"
        )));
    }
    let mut pairs = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        for i in 0..doc.len() - 1 {
            let choice = if rng.random_bool(NEGATIVE_PROB) {
                NspChoice::NotNext
            } else {
                NspChoice::IsNext
            };
            pairs.push(nsp_pair_at(documents, d, i, choice, rng)?);
        }
    }
    Ok(pairs)
}

/// Builds the pair starting at sentence `index` of `document` with a fixed
/// branch. A negative second sentence comes from a different document and
/// never has the same content as the true next sentence.
pub fn nsp_pair_at<T: PartialEq, R: Rng + ?Sized>(
    documents: &[Vec<T>],
    document: usize,
    index: usize,
    choice: NspChoice,
    rng: &mut R,
) -> Result<SentencePair> {
    let first = SentenceRef {
        document,
        sentence: index,
    };
    let next = &documents[document][index + 1];
    if choice == NspChoice::IsNext {
        return Ok(SentencePair {
            first,
            second: SentenceRef {
                document,
                sentence: index + 1,
            },
            is_next: true,
        });
    }
    const ATTEMPTS: usize = 64;
    for _ in 0..ATTEMPTS {
        let mut other = rng.random_range(0..documents.len() - 1);
        if other >= document {
            other += 1;
        }
        let sentence = rng.random_range(0..documents[other].len());
        if documents[other][sentence] != *next {
            return Ok(SentencePair {
                first,
                second: SentenceRef {
                    document: other,
                    sentence,
                },
                is_next: false,
            });
        }
    }
    // rejection sampling kept hitting copies of the true next sentence
    let candidate = documents
        .iter()
        .enumerate()
        .filter(|(d, _)| *d != document)
        .flat_map(|(d, doc)| doc.iter().enumerate().map(move |(s, t)| (d, s, t)))
        .find(|(_, _, t)| *t != next);
    match candidate {
        Some((d, s, _)) => Ok(SentencePair {
            first,
            second: SentenceRef {
                document: d,
                sentence: s,
            },
            is_next: false,
        }),
        None => Err(Error::NoNegatives(
            "every other sentence equals the true next sentence".into(),
        )),
    }
}

/// One encoded training sequence with its targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mlm_positions: Vec<usize>,
    pub mlm_targets: Vec<u32>,
    /// `Some(true)` for an actual next sentence; `None` skips the NSP loss.
    pub nsp_label: Option<bool>,
}

/// Losses and accuracy counts for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub mlm_correct: usize,
    pub mlm_total: usize,
    pub nsp_correct: usize,
    pub nsp_total: usize,
}

impl BatchStats {
    pub fn loss(&self) -> f64 {
        self.mlm_loss + self.nsp_loss
    }
}

pub fn mlm_logits(hidden: ArrayView1<'_, f64>, params: &EncoderParams) -> Array1<f64> {
    hidden.dot(&params.mlm_weight) + &params.mlm_bias
}

pub fn nsp_logits(pooled: ArrayView1<'_, f64>, params: &EncoderParams) -> Array1<f64> {
    pooled.dot(&params.nsp_weight) + &params.nsp_bias
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// NSP class 0 is "is next", class 1 "not next".
fn nsp_class(is_next: bool) -> usize {
    usize::from(!is_next)
}

/// Returns softmax probabilities and `-log p[target]`.
fn softmax_xent(logits: &Array1<f64>, target: usize) -> (Array1<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() - (logits[target] - max);
    (exp / sum, loss)
}

/// Summed MLM (mean over every masked target in the batch) and NSP (mean
/// over labelled examples) cross-entropy, with gradients for every tensor.
pub fn loss_and_gradients(
    batch: &[TrainingExample],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<(BatchStats, EncoderParams)> {
    let mut grads = params.zeros_like();
    let stats = accumulate(batch, params, config, Some(&mut grads))?;
    Ok((stats, grads))
}

/// Loss only; no gradient bookkeeping.
pub fn batch_loss(
    batch: &[TrainingExample],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<BatchStats> {
    accumulate(batch, params, config, None)
}

fn accumulate(
    batch: &[TrainingExample],
    params: &EncoderParams,
    config: &EncoderConfig,
    mut grads: Option<&mut EncoderParams>,
) -> Result<BatchStats> {
    let mut stats = BatchStats {
        mlm_total: batch.iter().map(|e| e.mlm_targets.len()).sum(),
        nsp_total: batch.iter().filter(|e| e.nsp_label.is_some()).count(),
        ..BatchStats::default()
    };
    let mlm_norm = 1.0 / stats.mlm_total.max(1) as f64;
    let nsp_norm = 1.0 / stats.nsp_total.max(1) as f64;

    for example in batch {
        if example.mlm_positions.len() != example.mlm_targets.len() {
            return Err(Error::Shape("MLM positions and targets differ in length".into()));
        }
        if let Some(&p) = example.mlm_positions.iter().find(|&&p| p >= example.ids.len()) {
            return Err(Error::Shape(format!("MLM position {p} outside the sequence")));
        }
        let keep = grads.is_some();
        let (out, trace) = forward(&example.ids, &example.segments, params, config, keep)?;
        let last = out.hidden_states.last().expect("hidden states");
        let mut d_last = Array2::<f64>::zeros(last.raw_dim());
        let mut d_pooled = Array1::<f64>::zeros(config.hidden_dim);

        for (&pos, &target) in example.mlm_positions.iter().zip(&example.mlm_targets) {
            let logits = mlm_logits(last.row(pos), params);
            let (mut probs, loss) = softmax_xent(&logits, target as usize);
            stats.mlm_loss += loss * mlm_norm;
            if argmax(logits.view()) == target as usize {
                stats.mlm_correct += 1;
            }
            if let Some(g) = grads.as_deref_mut() {
                probs[target as usize] -= 1.0;
                probs *= mlm_norm;
                outer_add(&mut g.mlm_weight, last.row(pos), probs.view());
                g.mlm_bias += &probs;
                let mut row = d_last.row_mut(pos);
                row += &params.mlm_weight.dot(&probs);
            }
        }

        if let Some(is_next) = example.nsp_label {
            let target = nsp_class(is_next);
            let logits = nsp_logits(out.pooled.view(), params);
            let (mut probs, loss) = softmax_xent(&logits, target);
            stats.nsp_loss += loss * nsp_norm;
            if argmax(logits.view()) == target {
                stats.nsp_correct += 1;
            }
            if let Some(g) = grads.as_deref_mut() {
                probs[target] -= 1.0;
                probs *= nsp_norm;
                outer_add(&mut g.nsp_weight, out.pooled.view(), probs.view());
                g.nsp_bias += &probs;
                d_pooled += &params.nsp_weight.dot(&probs);
            }
        }

        if let (Some(g), Some(trace)) = (grads.as_deref_mut(), trace) {
            backward(&trace, &out, d_last, d_pooled.view(), params, config, g);
        }
    }
    Ok(stats)
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut EncoderParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with its running state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    step: u64,
    moments: Option<(EncoderParams, EncoderParams)>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer) -> Self {
        OptimizerState {
            kind,
            step: 0,
            moments: None,
        }
    }

    /// Applies one update and rounds parameters to f32 precision so they
    /// survive a checkpoint round trip unchanged.
    pub fn update(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => params.add_scaled(grads, -lr),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let triples = params
                    .tensors_mut()
                    .into_iter()
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(grads.tensors());
                for ((((_, mut p), (_, mut m)), (_, mut v)), (_, g)) in triples {
                    ndarray::Zip::from(&mut p)
                        .and(&mut m)
                        .and(&mut v)
                        .and(&g)
                        .for_each(|p, m, v, &g| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                        });
                }
            }
        }
        params.round_to_f32();
    }
}

/// Per-step losses reported by [`train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub mlm_loss: f64,
    pub nsp_loss: f64,
}

/// One plain gradient-descent step on the summed MLM + NSP loss with the
/// gradient norm clipped to 1.0.
pub fn train_step(
    batch: &[TrainingExample],
    params: &mut EncoderParams,
    config: &EncoderConfig,
    learning_rate: f64,
) -> Result<StepLosses> {
    let mut sgd = OptimizerState::new(Optimizer::Sgd);
    step_with(batch, params, config, learning_rate, CLIP_NORM, &mut sgd).map(|s| StepLosses {
        mlm_loss: s.mlm_loss,
        nsp_loss: s.nsp_loss,
    })
}

/// Gradient step with an arbitrary optimizer. Fails without touching
/// `params` when the loss or any gradient is non-finite.
pub fn step_with(
    batch: &[TrainingExample],
    params: &mut EncoderParams,
    config: &EncoderConfig,
    learning_rate: f64,
    clip_norm: f64,
    optimizer: &mut OptimizerState,
) -> Result<BatchStats> {
    let (stats, mut grads) = loss_and_gradients(batch, params, config)?;
    if !stats.mlm_loss.is_finite() {
        return Err(Error::Divergence {
            tensor: "mlm_loss".into(),
        });
    }
    if !stats.nsp_loss.is_finite() {
        return Err(Error::Divergence {
            tensor: "nsp_loss".into(),
        });
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Divergence {
            tensor: format!("gradient of {name}"),
        });
    }
    clip_gradients(&mut grads, clip_norm);
    let mut updated = params.clone();
    optimizer.update(&mut updated, &grads, learning_rate);
    if let Some(name) = updated.first_non_finite() {
        return Err(Error::Divergence { tensor: name });
    }
    *params = updated;
    Ok(stats)
}

/// Argmax of the MLM head at each position; ties go to the lowest id.
/// Segment ids are all zero.
pub fn mlm_predict(
    ids: &[u32],
    positions: &[usize],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<Vec<u32>> {
    let out = encode(ids, &vec![0; ids.len()], params, config)?;
    predict_from(&out, positions, params)
}

pub fn predict_from(
    out: &ForwardOutput,
    positions: &[usize],
    params: &EncoderParams,
) -> Result<Vec<u32>> {
    let last = out.hidden_states.last().expect("hidden states");
    positions
        .iter()
        .map(|&p| {
            if p >= last.nrows() {
                return Err(Error::Shape(format!("position {p} outside the sequence")));
            }
            Ok(argmax(mlm_logits(last.row(p), params).view()) as u32)
        })
        .collect()
}
