//! Seeded generation of weights and input sequences.
//!
//! Draw order is fixed: `W_Q[0..H)`, `W_K[0..H)`, `W_V[0..H)`, `W_O`, then
//! whatever the caller draws next from the same generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{CrossLayerParams, LayerParams};
use crate::error::Result;
use crate::linalg::DenseMatrix;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize, half_width: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-half_width..=half_width))
        .collect();
    DenseMatrix::new(rows, cols, data).expect("generated shape is consistent")
}

fn draw_heads(rng: &mut SeededRng, heads: usize, rows: usize, cols: usize, a: f64) -> Vec<DenseMatrix> {
    (0..heads).map(|_| uniform_matrix(rng, rows, cols, a)).collect()
}

/// Weights uniform on `[-1/√d_model, 1/√d_model]`.
pub fn layer_params(
    rng: &mut SeededRng,
    d_model: usize,
    d_k: usize,
    d_v: usize,
    heads: usize,
) -> Result<LayerParams> {
    let a = 1.0 / (d_model as f64).sqrt();
    let w_q = draw_heads(rng, heads, d_model, d_k, a);
    let w_k = draw_heads(rng, heads, d_model, d_k, a);
    let w_v = draw_heads(rng, heads, d_model, d_v, a);
    let w_o = uniform_matrix(rng, heads * d_v, d_model, a);
    LayerParams::new(d_model, d_k, d_v, w_q, w_k, w_v, w_o)
}

/// Cross-attention weights; encoder-side projections use `1/√d_enc`.
pub fn cross_params(
    rng: &mut SeededRng,
    d_model: usize,
    d_enc: usize,
    d_k: usize,
    d_v: usize,
    heads: usize,
) -> Result<CrossLayerParams> {
    let a = 1.0 / (d_model as f64).sqrt();
    let a_enc = 1.0 / (d_enc as f64).sqrt();
    let w_q = draw_heads(rng, heads, d_model, d_k, a);
    let w_k = draw_heads(rng, heads, d_enc, d_k, a_enc);
    let w_v = draw_heads(rng, heads, d_enc, d_v, a_enc);
    let w_o = uniform_matrix(rng, heads * d_v, d_model, a);
    CrossLayerParams::new(d_model, d_enc, d_k, d_v, w_q, w_k, w_v, w_o)
}

/// Input sequence with entries uniform on `[-1, 1]`.
pub fn inputs(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    uniform_matrix(rng, rows, cols, 1.0)
}
