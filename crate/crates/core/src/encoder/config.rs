use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Desk-scale default: 4 layers, 4 heads, hidden 128.
    fn default() -> Self {
        EncoderConfig {
            num_layers: 4,
            num_heads: 4,
            hidden_dim: 128,
            ffn_dim: 512,
            max_seq_len: 256,
            vocab_size: 8192,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// BERT-Base geometry: 12 layers of 12 heads, hidden 768.
    pub fn bert_base(vocab_size: usize) -> Self {
        EncoderConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            ffn_dim: 3072,
            max_seq_len: 512,
            vocab_size,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }
}
