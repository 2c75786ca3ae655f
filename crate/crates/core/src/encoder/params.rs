use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::config::EncoderConfig;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Trainable tensors of one encoder layer. Weight matrices are stored
/// `[in, out]` and applied as `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub attention_norm_scale: Array1<f64>,
    pub attention_norm_shift: Array1<f64>,
    pub ffn_in_weight: Array2<f64>,
    pub ffn_in_bias: Array1<f64>,
    pub ffn_out_weight: Array2<f64>,
    pub ffn_out_bias: Array1<f64>,
    pub ffn_norm_scale: Array1<f64>,
    pub ffn_norm_shift: Array1<f64>,
}

/// Every trainable tensor of the encoder and its pretraining heads.
///
/// The same type doubles as the gradient container and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_weight: Array2<f64>,
    pub mlm_bias: Array1<f64>,
    pub nsp_weight: Array2<f64>,
    pub nsp_bias: Array1<f64>,
    pub pooler_weight: Array2<f64>,
    pub pooler_bias: Array1<f64>,
}

impl EncoderParams {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm scales. Values
    /// are rounded to f32 so a checkpoint stores them exactly.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut weight = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.sample(normal) as f32 as f64)
        };
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let token_embedding = weight(config.vocab_size, d);
        let position_embedding = weight(config.max_seq_len, d);
        let segment_embedding = weight(2, d);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                query: weight(d, d),
                key: weight(d, d),
                value: weight(d, d),
                output: weight(d, d),
                attention_norm_scale: Array1::ones(d),
                attention_norm_shift: Array1::zeros(d),
                ffn_in_weight: weight(d, f),
                ffn_in_bias: Array1::zeros(f),
                ffn_out_weight: weight(f, d),
                ffn_out_bias: Array1::zeros(d),
                ffn_norm_scale: Array1::ones(d),
                ffn_norm_shift: Array1::zeros(d),
            })
            .collect();
        Ok(EncoderParams {
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
            mlm_weight: weight(d, config.vocab_size),
            mlm_bias: Array1::zeros(config.vocab_size),
            nsp_weight: weight(d, 2),
            nsp_bias: Array1::zeros(2),
            pooler_weight: weight(d, d),
            pooler_bias: Array1::zeros(d),
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, mut t| t.fill(0.0));
        out
    }

    /// Tensor names in checkpoint order.
    pub fn names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_embedding.view().into_dyn()),
            ("embeddings.position".to_string(), self.position_embedding.view().into_dyn()),
            ("embeddings.segment".to_string(), self.segment_embedding.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("attention.query"), l.query.view().into_dyn()),
                (p("attention.key"), l.key.view().into_dyn()),
                (p("attention.value"), l.value.view().into_dyn()),
                (p("attention.output"), l.output.view().into_dyn()),
                (p("attention_norm.scale"), l.attention_norm_scale.view().into_dyn()),
                (p("attention_norm.shift"), l.attention_norm_shift.view().into_dyn()),
                (p("ffn.in.weight"), l.ffn_in_weight.view().into_dyn()),
                (p("ffn.in.bias"), l.ffn_in_bias.view().into_dyn()),
                (p("ffn.out.weight"), l.ffn_out_weight.view().into_dyn()),
                (p("ffn.out.bias"), l.ffn_out_bias.view().into_dyn()),
                (p("ffn_norm.scale"), l.ffn_norm_scale.view().into_dyn()),
                (p("ffn_norm.shift"), l.ffn_norm_shift.view().into_dyn()),
            ]);
        }
        out.extend([
            ("mlm.weight".to_string(), self.mlm_weight.view().into_dyn()),
            ("mlm.bias".to_string(), self.mlm_bias.view().into_dyn()),
            ("nsp.weight".to_string(), self.nsp_weight.view().into_dyn()),
            ("nsp.bias".to_string(), self.nsp_bias.view().into_dyn()),
            ("pooler.weight".to_string(), self.pooler_weight.view().into_dyn()),
            ("pooler.bias".to_string(), self.pooler_bias.view().into_dyn()),
        ]);
        out
    }

    /// Mutable counterpart of [`EncoderParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_embedding.view_mut().into_dyn()),
            ("embeddings.position".to_string(), self.position_embedding.view_mut().into_dyn()),
            ("embeddings.segment".to_string(), self.segment_embedding.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("attention.query"), l.query.view_mut().into_dyn()),
                (p("attention.key"), l.key.view_mut().into_dyn()),
                (p("attention.value"), l.value.view_mut().into_dyn()),
                (p("attention.output"), l.output.view_mut().into_dyn()),
                (p("attention_norm.scale"), l.attention_norm_scale.view_mut().into_dyn()),
                (p("attention_norm.shift"), l.attention_norm_shift.view_mut().into_dyn()),
                (p("ffn.in.weight"), l.ffn_in_weight.view_mut().into_dyn()),
                (p("ffn.in.bias"), l.ffn_in_bias.view_mut().into_dyn()),
                (p("ffn.out.weight"), l.ffn_out_weight.view_mut().into_dyn()),
                (p("ffn.out.bias"), l.ffn_out_bias.view_mut().into_dyn()),
                (p("ffn_norm.scale"), l.ffn_norm_scale.view_mut().into_dyn()),
                (p("ffn_norm.shift"), l.ffn_norm_shift.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("mlm.weight".to_string(), self.mlm_weight.view_mut().into_dyn()),
            ("mlm.bias".to_string(), self.mlm_bias.view_mut().into_dyn()),
            ("nsp.weight".to_string(), self.nsp_weight.view_mut().into_dyn()),
            ("nsp.bias".to_string(), self.nsp_bias.view_mut().into_dyn()),
            ("pooler.weight".to_string(), self.pooler_weight.view_mut().into_dyn()),
            ("pooler.bias".to_string(), self.pooler_bias.view_mut().into_dyn()),
        ]);
        out
    }

    pub fn for_each_mut<F>(&mut self, mut f: F)
    where
        F: FnMut(&str, ArrayViewMutD<'_, f64>),
    {
        for (name, t) in self.tensors_mut() {
            f(&name, t);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, mut t| t.mapv_inplace(|v| v * factor));
    }

    pub fn round_to_f32(&mut self) {
        self.for_each_mut(|_, mut t| t.mapv_inplace(|v| v as f32 as f64));
    }

    /// Order-sensitive FNV-1a digest over names, shapes and f64 bit patterns.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(PRIME);
            }
        };
        for (name, t) in self.tensors() {
            feed(name.as_bytes());
            for d in t.shape() {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in t.iter() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        hash
    }

    /// Checks that every tensor has the shape `config` implies.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let expected = EncoderParams::shapes(config);
        let actual: Vec<(String, Vec<usize>)> = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected != actual {
            let diff = expected
                .iter()
                .zip(&actual)
                .find(|(e, a)| e != a)
                .map(|(e, a)| format!("{} expected {:?}, found {} {:?}", e.0, e.1, a.0, a.1))
                .unwrap_or_else(|| "tensor count differs".to_string());
            return Err(Error::Shape(format!("parameters do not match config: {diff}")));
        }
        Ok(())
    }

    /// Names and shapes for `config`, in checkpoint order.
    pub fn shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let (v, d, f) = (config.vocab_size, config.hidden_dim, config.ffn_dim);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![v, d]),
            ("embeddings.position".to_string(), vec![config.max_seq_len, d]),
            ("embeddings.segment".to_string(), vec![2, d]),
        ];
        for i in 0..config.num_layers {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("attention.query"), vec![d, d]),
                (p("attention.key"), vec![d, d]),
                (p("attention.value"), vec![d, d]),
                (p("attention.output"), vec![d, d]),
                (p("attention_norm.scale"), vec![d]),
                (p("attention_norm.shift"), vec![d]),
                (p("ffn.in.weight"), vec![d, f]),
                (p("ffn.in.bias"), vec![f]),
                (p("ffn.out.weight"), vec![f, d]),
                (p("ffn.out.bias"), vec![d]),
                (p("ffn_norm.scale"), vec![d]),
                (p("ffn_norm.shift"), vec![d]),
            ]);
        }
        out.extend([
            ("mlm.weight".to_string(), vec![d, v]),
            ("mlm.bias".to_string(), vec![v]),
            ("nsp.weight".to_string(), vec![d, 2]),
            ("nsp.bias".to_string(), vec![2]),
            ("pooler.weight".to_string(), vec![d, d]),
            ("pooler.bias".to_string(), vec![d]),
        ]);
        out
    }

    /// `self += factor * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderParams, factor: f64) {
        for ((_, mut dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(dst.raw_dim().slice(), src.raw_dim().slice());
            Zip::from(&mut dst).and(&src).for_each(|d, &s| *d += factor * s);
        }
    }
}
