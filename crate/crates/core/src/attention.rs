use ndarray::{s, Array4, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Post-softmax attention for one sequence, indexed
/// `[layer][head][source][target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    values: Array4<f64>,
}

impl AttentionTensor {
    /// Wraps a `[layers, heads, n, n]` array. The last two axes must match.
    pub fn new(values: Array4<f64>) -> Result<Self> {
        let (_, _, rows, cols) = values.dim();
        if rows != cols {
            return Err(Error::Shape(format!(
                "attention must be square per head, got {rows}x{cols}"
            )));
        }
        Ok(AttentionTensor { values })
    }

    pub fn num_layers(&self) -> usize {
        self.values.dim().0
    }

    pub fn num_heads(&self) -> usize {
        self.values.dim().1
    }

    pub fn seq_len(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array4<f64> {
        self.values
    }

    pub fn get(&self, layer: usize, head: usize, source: usize, target: usize) -> f64 {
        self.values[[layer, head, source, target]]
    }

    pub fn head(&self, layer: usize, head: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![layer, head, .., ..])
    }

    pub fn row(&self, layer: usize, head: usize, source: usize) -> ArrayView1<'_, f64> {
        self.values.slice(s![layer, head, source, ..])
    }

    /// Largest `|sum(row) - 1|` over every row, or any negative entry's magnitude.
    pub fn max_stochastic_error(&self) -> f64 {
        let (layers, heads, n, _) = self.values.dim();
        let mut worst = 0.0f64;
        for l in 0..layers {
            for h in 0..heads {
                for i in 0..n {
                    let row = self.row(l, h, i);
                    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                    if min < 0.0 {
                        worst = worst.max(-min);
                    }
                    worst = worst.max((row.sum() - 1.0).abs());
                }
            }
        }
        worst
    }
}
