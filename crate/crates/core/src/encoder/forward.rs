use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};

use super::config::EncoderConfig;
use super::params::{EncoderParams, LayerParams};
use crate::attention::AttentionTensor;
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;

/// Result of one forward pass over a single sequence.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `num_layers + 1` matrices of shape `[n, hidden]`: the summed
    /// embeddings followed by each layer's output.
    pub hidden_states: Vec<Array2<f64>>,
    pub attention: AttentionTensor,
    /// `tanh(W_pool · h_0 + b_pool)` over the final layer's first position.
    pub pooled: Array1<f64>,
}

/// Intermediate values of one layer kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// `[heads, n, n]`
    pub probs: Array3<f64>,
    pub context: Array2<f64>,
    pub norm1: NormTrace,
    pub h1: Array2<f64>,
    pub pre_relu: Array2<f64>,
    pub act: Array2<f64>,
    pub norm2: NormTrace,
}

#[derive(Debug, Clone)]
pub(crate) struct NormTrace {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub layers: Vec<LayerTrace>,
}

fn check_inputs(ids: &[u32], segments: &[u8], config: &EncoderConfig) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Empty("input sequence".into()));
    }
    if ids.len() > config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: config.max_seq_len,
        });
    }
    if segments.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} segment ids for {} tokens",
            segments.len(),
            ids.len()
        )));
    }
    if let Some(p) = segments.iter().position(|&s| s > 1) {
        return Err(Error::Shape(format!("segment id {} at {p} is not 0 or 1", segments[p])));
    }
    if let Some((position, &id)) = ids
        .iter()
        .enumerate()
        .find(|(_, &id)| id as usize >= config.vocab_size)
    {
        return Err(Error::Vocabulary {
            id,
            position,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

/// Runs the encoder over one sequence, recording every layer's attention.
pub fn encode(
    ids: &[u32],
    segments: &[u8],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<ForwardOutput> {
    forward(ids, segments, params, config, false).map(|(out, _)| out)
}

pub(crate) fn forward(
    ids: &[u32],
    segments: &[u8],
    params: &EncoderParams,
    config: &EncoderConfig,
    keep_trace: bool,
) -> Result<(ForwardOutput, Option<ForwardTrace>)> {
    config.validate()?;
    check_inputs(ids, segments, config)?;
    params.check_shapes(config)?;

    let n = ids.len();
    let mut x = Array2::<f64>::zeros((n, config.hidden_dim));
    for (i, (&id, &seg)) in ids.iter().zip(segments).enumerate() {
        let mut row = x.row_mut(i);
        row += &params.token_embedding.row(id as usize);
        row += &params.position_embedding.row(i);
        row += &params.segment_embedding.row(seg as usize);
    }

    let mut hidden_states = Vec::with_capacity(config.num_layers + 1);
    let mut attention = Array4::<f64>::zeros((config.num_layers, config.num_heads, n, n));
    let mut traces = Vec::new();
    hidden_states.push(x);
    for (l, layer) in params.layers.iter().enumerate() {
        let input = hidden_states.last().expect("embeddings pushed");
        let (out, trace) = layer_forward(input.view(), layer, config);
        attention.slice_mut(s![l, .., .., ..]).assign(&trace.probs);
        if keep_trace {
            traces.push(trace);
        }
        hidden_states.push(out);
    }

    let last = hidden_states.last().expect("at least embeddings");
    let pooled = pool(last.row(0), params);
    let output = ForwardOutput {
        hidden_states,
        attention: AttentionTensor::new(attention)?,
        pooled,
    };
    let trace = keep_trace.then(|| ForwardTrace {
        ids: ids.to_vec(),
        segments: segments.to_vec(),
        layers: traces,
    });
    Ok((output, trace))
}

/// The pooler transform `tanh(x · W + b)`.
pub fn pool(first: ArrayView1<'_, f64>, params: &EncoderParams) -> Array1<f64> {
    let mut out = first.dot(&params.pooler_weight) + &params.pooler_bias;
    out.mapv_inplace(f64::tanh);
    out
}

fn layer_forward(
    x: ArrayView2<'_, f64>,
    p: &LayerParams,
    config: &EncoderConfig,
) -> (Array2<f64>, LayerTrace) {
    let n = x.nrows();
    let dk = config.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&p.query);
    let k = x.dot(&p.key);
    let v = x.dot(&p.value);

    let mut probs = Array3::<f64>::zeros((config.num_heads, n, n));
    let mut context = Array2::<f64>::zeros((n, config.hidden_dim));
    for h in 0..config.num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|s| s * scale);
        softmax_rows(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.slice_mut(s![h, .., ..]).assign(&scores);
    }

    let residual1 = &x + &context.dot(&p.output);
    let (h1, norm1) = layer_norm(
        residual1,
        &p.attention_norm_scale,
        &p.attention_norm_shift,
    );
    let pre_relu = h1.dot(&p.ffn_in_weight) + &p.ffn_in_bias;
    let act = pre_relu.mapv(|v| v.max(0.0));
    let residual2 = &h1 + &(act.dot(&p.ffn_out_weight) + &p.ffn_out_bias);
    let (out, norm2) = layer_norm(residual2, &p.ffn_norm_scale, &p.ffn_norm_shift);
    let trace = LayerTrace {
        q,
        k,
        v,
        probs,
        context,
        norm1,
        h1,
        pre_relu,
        act,
        norm2,
    };
    (out, trace)
}

pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn layer_norm(
    mut x: Array2<f64>,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> (Array2<f64>, NormTrace) {
    let d = x.ncols() as f64;
    let mut inv_std = Array1::<f64>::zeros(x.nrows());
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        inv_std[i] = r;
    }
    let out = &x * scale + shift;
    (
        out,
        NormTrace {
            normalized: x,
            inv_std,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: usize, heads: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: layers,
            num_heads: heads,
            hidden_dim: 8,
            ffn_dim: 16,
            max_seq_len: 16,
            vocab_size: 24,
            seed: 3,
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_rows() {
        let config = tiny(2, 2);
        let mut params = EncoderParams::init(&config).unwrap();
        for l in &mut params.layers {
            l.query.fill(0.0);
            l.key.fill(0.0);
        }
        let out = encode(&[2, 7, 9, 11, 3], &[0; 5], &params, &config).unwrap();
        for v in out.attention.values() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let config = tiny(2, 2);
        let params = EncoderParams::init(&config).unwrap();
        let out = encode(&[5], &[0], &params, &config).unwrap();
        assert!(out.attention.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn output_shapes() {
        let config = tiny(3, 4);
        let params = EncoderParams::init(&config).unwrap();
        let out = encode(&[2, 5, 6, 3], &[0, 0, 1, 1], &params, &config).unwrap();
        assert_eq!(out.hidden_states.len(), 4);
        assert_eq!(out.attention.values().dim(), (3, 4, 4, 4));
        assert_eq!(out.pooled.len(), 8);
        assert!(out.attention.max_stochastic_error() < 1e-12);
    }

    #[test]
    fn pooled_is_tanh_affine_of_first_state() {
        let config = tiny(1, 2);
        let params = EncoderParams::init(&config).unwrap();
        let out = encode(&[2, 5, 3], &[0; 3], &params, &config).unwrap();
        let first = out.hidden_states[1].row(0);
        for j in 0..8 {
            let z: f64 = (0..8)
                .map(|i| first[i] * params.pooler_weight[[i, j]])
                .sum::<f64>()
                + params.pooler_bias[j];
            assert!((out.pooled[j] - z.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn input_errors() {
        let config = tiny(1, 2);
        let params = EncoderParams::init(&config).unwrap();
        assert!(matches!(
            encode(&[1; 17], &[0; 17], &params, &config),
            Err(Error::SequenceTooLong { len: 17, max: 16 })
        ));
        assert!(matches!(
            encode(&[1, 24], &[0, 0], &params, &config),
            Err(Error::Vocabulary { id: 24, position: 1, .. })
        ));
        assert!(encode(&[1, 2], &[0], &params, &config).is_err());
    }

    #[test]
    fn deterministic() {
        let config = tiny(2, 2);
        let params = EncoderParams::init(&config).unwrap();
        let a = encode(&[2, 8, 9, 3], &[0; 4], &params, &config).unwrap();
        let b = encode(&[2, 8, 9, 3], &[0; 4], &params, &config).unwrap();
        assert_eq!(a.attention, b.attention);
        assert_eq!(a.hidden_states, b.hidden_states);
    }
}
