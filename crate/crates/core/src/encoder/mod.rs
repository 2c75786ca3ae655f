//! BERT-style encoder with attention recording, MLM/NSP heads and a
//! small pretraining loop.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
mod params;
pub mod pretrain;
mod train;

pub use config::EncoderConfig;
pub use forward::{encode, pool, ForwardOutput};
pub use params::{EncoderParams, LayerParams};
pub use pretrain::{pretrain, Document, EpochMetrics, PairSet, PretrainOutput, Schedule};
pub use train::{
    apply_masking, argmax, batch_loss, clip_gradients, loss_and_gradients, make_nsp_pairs,
    mask_for_mlm, mlm_logits, mlm_predict, nsp_logits, nsp_pair_at, predict_from, step_with,
    train_step, BatchStats, MaskBranch, MaskedSequence, NspChoice, Optimizer, OptimizerState,
    SentencePair, SentenceRef, StepLosses, TrainingExample, CLIP_NORM, MASK_PROB, NEGATIVE_PROB,
    RANDOM_PROB, SELECT_PROB,
};
