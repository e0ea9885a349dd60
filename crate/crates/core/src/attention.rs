//! Batched attention over whole sequences: causal multi-head self-attention
//! and encoder–decoder cross-attention.
//!
//! Causal masking restricts the softmax and the value sum to the prefix
//! `j ≤ t`; masked positions never enter any reduction and their weights
//! are stored as exact zeros.

use crate::controller::{project_sequence, CrossLayerParams, LayerParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{dot, matmul, softmax_stable, DenseMatrix};
use crate::memory::{weighted_sum, ScaleVariant};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Masking {
    /// Position `t` sees `j ≤ t`.
    #[default]
    Causal,
    /// Every position sees the whole sequence.
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionOptions {
    pub masking: Masking,
    pub scale: ScaleVariant,
    /// Heads are computed independently; this only changes scheduling.
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `T × d_model`.
    pub z: DenseMatrix,
    /// One `T × T_src` matrix per head.
    pub weights: Vec<DenseMatrix>,
}

/// One head's un-mixed output (`T × d_v`) and its weights (`T × T_src`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub out: DenseMatrix,
    pub weights: DenseMatrix,
}

fn attend(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    scale: f64,
    causal: bool,
) -> Result<HeadOutput> {
    let (t_len, s_len) = (q.rows(), k.rows());
    let mut out = DenseMatrix::zeros(t_len, v.cols());
    let mut weights = DenseMatrix::zeros(t_len, s_len);
    for t in 0..t_len {
        let visible = if causal { t + 1 } else { s_len };
        let logits: Vec<f64> = (0..visible)
            .map(|j| scale * dot(k.row(j), q.row(t)))
            .collect();
        let w = softmax_stable(&logits)?;
        let row = weighted_sum(&w, |j| v.row(j), v.cols());
        out.row_mut(t).copy_from_slice(&row);
        weights.row_mut(t)[..visible].copy_from_slice(&w);
    }
    Ok(HeadOutput { out, weights })
}

/// Single-head self-attention over `x` (`T × d_model`).
pub fn self_attention_head(
    x: &DenseMatrix,
    params: &LayerParams,
    head: usize,
    opts: AttentionOptions,
) -> Result<HeadOutput> {
    let p = project_sequence(x, params, head)?;
    let scale = opts.scale.factor(params.d_k(), params.d_v());
    attend(&p.q, &p.k, &p.v, scale, opts.masking == Masking::Causal)
}

pub fn causal_self_attention(x: &DenseMatrix, params: &LayerParams) -> Result<AttentionOutput> {
    self_attention(x, params, AttentionOptions::default())
}

/// Multi-head self-attention: every head through [`self_attention_head`],
/// then [`concat_heads_and_mix`].
pub fn self_attention(
    x: &DenseMatrix,
    params: &LayerParams,
    opts: AttentionOptions,
) -> Result<AttentionOutput> {
    if x.cols() != params.d_model() {
        return Err(shape_err("self_attention", params.d_model(), x.cols()));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let heads: Vec<HeadOutput> = par::map_indexed(params.heads(), opts.execution, |h| {
        self_attention_head(x, params, h, opts)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    mix(heads, params.w_o())
}

fn mix(heads: Vec<HeadOutput>, w_o: &DenseMatrix) -> Result<AttentionOutput> {
    let (outs, weights): (Vec<_>, Vec<_>) = heads.into_iter().map(|h| (h.out, h.weights)).unzip();
    Ok(AttentionOutput {
        z: concat_heads_and_mix(&outs, w_o)?,
        weights,
    })
}

/// Concatenates head outputs column-wise in head order and multiplies by
/// `w_o` (`(H·d_v) × d_model`).
pub fn concat_heads_and_mix(head_outputs: &[DenseMatrix], w_o: &DenseMatrix) -> Result<DenseMatrix> {
    let first = head_outputs.first().ok_or(Error::EmptyInput)?;
    let (t_len, d_v) = first.shape();
    if let Some(bad) = head_outputs.iter().find(|h| h.shape() != (t_len, d_v)) {
        return Err(shape_err(
            "concat_heads_and_mix",
            format!("{:?}", (t_len, d_v)),
            format!("{:?}", bad.shape()),
        ));
    }
    let width = head_outputs.len() * d_v;
    if w_o.rows() != width {
        return Err(shape_err("concat_heads_and_mix W_O rows", width, w_o.rows()));
    }
    let mut cat = DenseMatrix::zeros(t_len, width);
    for t in 0..t_len {
        let row = cat.row_mut(t);
        for (h, head) in head_outputs.iter().enumerate() {
            row[h * d_v..(h + 1) * d_v].copy_from_slice(head.row(t));
        }
    }
    matmul(&cat, w_o)
}

/// Cross-attention: decoder rows query the projected encoder states, no mask.
///
/// Encoder keys and values are projected once per head and reused for
/// every decoder position.
pub fn cross_attention(
    x_dec: &DenseMatrix,
    enc_states: &DenseMatrix,
    params: &CrossLayerParams,
    opts: AttentionOptions,
) -> Result<AttentionOutput> {
    if x_dec.cols() != params.d_model() {
        return Err(shape_err("cross_attention decoder", params.d_model(), x_dec.cols()));
    }
    if enc_states.cols() != params.d_enc() {
        return Err(shape_err("cross_attention encoder", params.d_enc(), enc_states.cols()));
    }
    if enc_states.rows() == 0 {
        return Err(Error::EmptyMemory);
    }
    if x_dec.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let scale = opts.scale.factor(params.d_k(), params.d_v());
    let heads: Vec<HeadOutput> = par::map_indexed(params.heads(), opts.execution, |h| {
        let q = matmul(x_dec, &params.w_q()[h])?;
        let k = matmul(enc_states, &params.w_k()[h])?;
        let v = matmul(enc_states, &params.w_v()[h])?;
        attend(&q, &k, &v, scale, false)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    mix(heads, params.w_o())
}
