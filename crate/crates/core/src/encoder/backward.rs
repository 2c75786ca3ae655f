//! Reverse-mode gradients for the encoder stack.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::config::EncoderConfig;
use super::forward::{ForwardOutput, ForwardTrace, LayerTrace, NormTrace};
use super::params::{EncoderParams, LayerParams};

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the final hidden states is `d_last` (`[n, hidden]`) and with
/// respect to the pooled vector is `d_pooled`.
pub(crate) fn backward(
    trace: &ForwardTrace,
    output: &ForwardOutput,
    mut d_last: Array2<f64>,
    d_pooled: ArrayView1<'_, f64>,
    params: &EncoderParams,
    config: &EncoderConfig,
    grads: &mut EncoderParams,
) {
    let last = output.hidden_states.last().expect("hidden states");
    // pooled = tanh(h0 · W + b)
    let d_pre = &d_pooled * &output.pooled.mapv(|p| 1.0 - p * p);
    outer_add(&mut grads.pooler_weight, last.row(0), d_pre.view());
    grads.pooler_bias += &d_pre;
    {
        let mut row = d_last.row_mut(0);
        row += &params.pooler_weight.dot(&d_pre);
    }

    let mut dx = d_last;
    for l in (0..config.num_layers).rev() {
        let input = &output.hidden_states[l];
        dx = layer_backward(
            dx,
            input,
            &trace.layers[l],
            &params.layers[l],
            &mut grads.layers[l],
            config,
        );
    }

    for (i, (&id, &seg)) in trace.ids.iter().zip(&trace.segments).enumerate() {
        let row = dx.row(i);
        let mut t = grads.token_embedding.row_mut(id as usize);
        t += &row;
        let mut p = grads.position_embedding.row_mut(i);
        p += &row;
        let mut sg = grads.segment_embedding.row_mut(seg as usize);
        sg += &row;
    }
}

/// `m += a ⊗ b`
pub(crate) fn outer_add(m: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, &b);
        }
    }
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    norm: &NormTrace,
    scale: &Array1<f64>,
    d_scale: &mut Array1<f64>,
    d_shift: &mut Array1<f64>,
) -> Array2<f64> {
    *d_scale += &(dy * &norm.normalized).sum_axis(Axis(0));
    *d_shift += &dy.sum_axis(Axis(0));
    let d_norm = dy * scale;
    let d = dy.ncols() as f64;
    let mut dx = Array2::<f64>::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = d_norm.row(i);
        let xh = norm.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = norm.inv_std[i];
        let mut out = dx.row_mut(i);
        for j in 0..g.len() {
            out[j] = r * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

fn layer_backward(
    dy: Array2<f64>,
    x: &Array2<f64>,
    t: &LayerTrace,
    p: &LayerParams,
    g: &mut LayerParams,
    config: &EncoderConfig,
) -> Array2<f64> {
    // out = LN2(h1 + act · W2 + b2)
    let d_res2 = layer_norm_backward(
        &dy,
        &t.norm2,
        &p.ffn_norm_scale,
        &mut g.ffn_norm_scale,
        &mut g.ffn_norm_shift,
    );
    g.ffn_out_weight += &t.act.t().dot(&d_res2);
    g.ffn_out_bias += &d_res2.sum_axis(Axis(0));
    let mut d_pre = d_res2.dot(&p.ffn_out_weight.t());
    ndarray::Zip::from(&mut d_pre)
        .and(&t.pre_relu)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
    g.ffn_in_weight += &t.h1.t().dot(&d_pre);
    g.ffn_in_bias += &d_pre.sum_axis(Axis(0));
    let d_h1 = d_res2 + d_pre.dot(&p.ffn_in_weight.t());

    // h1 = LN1(x + context · Wo)
    let d_res1 = layer_norm_backward(
        &d_h1,
        &t.norm1,
        &p.attention_norm_scale,
        &mut g.attention_norm_scale,
        &mut g.attention_norm_shift,
    );
    g.output += &t.context.t().dot(&d_res1);
    let d_context = d_res1.dot(&p.output.t());

    let dk = config.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Array2::<f64>::zeros(t.q.raw_dim());
    let mut dk_all = Array2::<f64>::zeros(t.k.raw_dim());
    let mut dv = Array2::<f64>::zeros(t.v.raw_dim());
    for h in 0..config.num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let probs = t.probs.slice(s![h, .., ..]);
        let dz = d_context.slice(cols);
        let d_probs = dz.dot(&t.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dz));
        // softmax: dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let mut d_scores = &d_probs * &probs;
        let row_dot = d_scores.sum_axis(Axis(1));
        for (i, mut row) in d_scores.axis_iter_mut(Axis(0)).enumerate() {
            let a = probs.row(i);
            for j in 0..row.len() {
                row[j] -= a[j] * row_dot[i];
            }
        }
        d_scores.mapv_inplace(|v| v * scale);
        dq.slice_mut(cols).assign(&d_scores.dot(&t.k.slice(cols)));
        dk_all.slice_mut(cols).assign(&d_scores.t().dot(&t.q.slice(cols)));
    }
    let xt = x.t();
    g.query += &xt.dot(&dq);
    g.key += &xt.dot(&dk_all);
    g.value += &xt.dot(&dv);

    d_res1 + dq.dot(&p.query.t()) + dk_all.dot(&p.key.t()) + dv.dot(&p.value.t())
}
