//! The feedforward controller: per-head linear maps from an input token to
//! a query, a key and a value. It holds no state between calls.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{matmul, vecmat, DenseMatrix, DenseVector};

/// Projection weights for one multi-head attention layer.
///
/// Per head `h`: `w_q[h]` and `w_k[h]` are `d_model × d_k`, `w_v[h]` is
/// `d_model × d_v`. `w_o` is `(heads·d_v) × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    d_model: usize,
    d_k: usize,
    d_v: usize,
    w_q: Vec<DenseMatrix>,
    w_k: Vec<DenseMatrix>,
    w_v: Vec<DenseMatrix>,
    w_o: DenseMatrix,
}

fn check_all(
    what: &'static str,
    mats: &[DenseMatrix],
    heads: usize,
    shape: (usize, usize),
) -> Result<()> {
    if mats.len() != heads {
        return Err(shape_err(what, format!("{heads} heads"), mats.len()));
    }
    for m in mats {
        if m.shape() != shape {
            return Err(shape_err(what, format!("{shape:?}"), format!("{:?}", m.shape())));
        }
    }
    Ok(())
}

impl LayerParams {
    pub fn new(
        d_model: usize,
        d_k: usize,
        d_v: usize,
        w_q: Vec<DenseMatrix>,
        w_k: Vec<DenseMatrix>,
        w_v: Vec<DenseMatrix>,
        w_o: DenseMatrix,
    ) -> Result<Self> {
        let heads = w_q.len();
        if heads == 0 || d_model == 0 || d_k == 0 || d_v == 0 {
            return Err(Error::Config("all dimensions and the head count must be >= 1".into()));
        }
        check_all("LayerParams W_Q", &w_q, heads, (d_model, d_k))?;
        check_all("LayerParams W_K", &w_k, heads, (d_model, d_k))?;
        check_all("LayerParams W_V", &w_v, heads, (d_model, d_v))?;
        if w_o.shape() != (heads * d_v, d_model) {
            return Err(shape_err(
                "LayerParams W_O",
                format!("{:?}", (heads * d_v, d_model)),
                format!("{:?}", w_o.shape()),
            ));
        }
        Ok(Self {
            d_model,
            d_k,
            d_v,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    /// All-identity projections; requires `d_k = d_v = d_model`.
    pub fn identity(d_model: usize, heads: usize) -> Self {
        let id = DenseMatrix::identity(d_model);
        let mut w_o = DenseMatrix::zeros(heads * d_model, d_model);
        for i in 0..d_model {
            w_o.set(i, i, 1.0);
        }
        Self::new(
            d_model,
            d_model,
            d_model,
            vec![id.clone(); heads],
            vec![id.clone(); heads],
            vec![id; heads],
            w_o,
        )
        .expect("identity params are well-formed")
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
    pub fn d_k(&self) -> usize {
        self.d_k
    }
    pub fn d_v(&self) -> usize {
        self.d_v
    }
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }
    pub fn w_q(&self) -> &[DenseMatrix] {
        &self.w_q
    }
    pub fn w_k(&self) -> &[DenseMatrix] {
        &self.w_k
    }
    pub fn w_v(&self) -> &[DenseMatrix] {
        &self.w_v
    }
    pub fn w_o(&self) -> &DenseMatrix {
        &self.w_o
    }

    /// Mutable view of every weight matrix in file order:
    /// `W_Q[0..H), W_K[0..H), W_V[0..H), W_O`.
    pub fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = Vec::with_capacity(3 * self.w_q.len() + 1);
        out.extend(self.w_q.iter_mut());
        out.extend(self.w_k.iter_mut());
        out.extend(self.w_v.iter_mut());
        out.push(&mut self.w_o);
        out
    }

    /// Every weight matrix in file order.
    pub fn matrices(&self) -> Vec<&DenseMatrix> {
        self.w_q
            .iter()
            .chain(&self.w_k)
            .chain(&self.w_v)
            .chain(std::iter::once(&self.w_o))
            .collect()
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads() {
            return Err(Error::Index {
                what: "head",
                index: head,
                limit: self.heads(),
            });
        }
        Ok(())
    }
}

/// Controller emission for one token and one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedToken {
    pub q: DenseVector,
    pub k: DenseVector,
    pub v: DenseVector,
    pub head: usize,
}

/// `q = W_Q[h]ᵀx`, `k = W_K[h]ᵀx`, `v = W_V[h]ᵀx`.
pub fn project(x: &[f64], params: &LayerParams, head: usize) -> Result<ProjectedToken> {
    params.check_head(head)?;
    if x.len() != params.d_model {
        return Err(shape_err("project", params.d_model, x.len()));
    }
    Ok(ProjectedToken {
        q: vecmat(x, &params.w_q[head])?,
        k: vecmat(x, &params.w_k[head])?,
        v: vecmat(x, &params.w_v[head])?,
        head,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSequence {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
}

/// Projects every row of `x` (`T × d_model`) for one head.
pub fn project_sequence(x: &DenseMatrix, params: &LayerParams, head: usize) -> Result<ProjectedSequence> {
    params.check_head(head)?;
    if x.cols() != params.d_model {
        return Err(shape_err("project_sequence", params.d_model, x.cols()));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(ProjectedSequence {
        q: matmul(x, &params.w_q[head])?,
        k: matmul(x, &params.w_k[head])?,
        v: matmul(x, &params.w_v[head])?,
    })
}

/// Weights for encoder–decoder cross-attention.
///
/// Queries come from decoder tokens (`w_q[h]`: `d_model × d_k`); keys and
/// values come from encoder states (`w_k[h]`: `d_enc × d_k`,
/// `w_v[h]`: `d_enc × d_v`). `w_o` mixes the heads back to `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossLayerParams {
    d_model: usize,
    d_enc: usize,
    d_k: usize,
    d_v: usize,
    w_q: Vec<DenseMatrix>,
    w_k: Vec<DenseMatrix>,
    w_v: Vec<DenseMatrix>,
    w_o: DenseMatrix,
}

impl CrossLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d_model: usize,
        d_enc: usize,
        d_k: usize,
        d_v: usize,
        w_q: Vec<DenseMatrix>,
        w_k: Vec<DenseMatrix>,
        w_v: Vec<DenseMatrix>,
        w_o: DenseMatrix,
    ) -> Result<Self> {
        let heads = w_q.len();
        if heads == 0 || d_model == 0 || d_enc == 0 || d_k == 0 || d_v == 0 {
            return Err(Error::Config("all dimensions and the head count must be >= 1".into()));
        }
        check_all("CrossLayerParams W_Q", &w_q, heads, (d_model, d_k))?;
        check_all("CrossLayerParams W_K", &w_k, heads, (d_enc, d_k))?;
        check_all("CrossLayerParams W_V", &w_v, heads, (d_enc, d_v))?;
        if w_o.shape() != (heads * d_v, d_model) {
            return Err(shape_err(
                "CrossLayerParams W_O",
                format!("{:?}", (heads * d_v, d_model)),
                format!("{:?}", w_o.shape()),
            ));
        }
        Ok(Self {
            d_model,
            d_enc,
            d_k,
            d_v,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
    pub fn d_enc(&self) -> usize {
        self.d_enc
    }
    pub fn d_k(&self) -> usize {
        self.d_k
    }
    pub fn d_v(&self) -> usize {
        self.d_v
    }
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }
    pub fn w_q(&self) -> &[DenseMatrix] {
        &self.w_q
    }
    pub fn w_k(&self) -> &[DenseMatrix] {
        &self.w_k
    }
    pub fn w_v(&self) -> &[DenseMatrix] {
        &self.w_v
    }
    pub fn w_o(&self) -> &DenseMatrix {
        &self.w_o
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads() {
            return Err(Error::Index {
                what: "head",
                index: head,
                limit: self.heads(),
            });
        }
        Ok(())
    }

    /// Decoder-side query `W_Q[h]ᵀx`.
    pub fn project_query(&self, x: &[f64], head: usize) -> Result<DenseVector> {
        self.check_head(head)?;
        if x.len() != self.d_model {
            return Err(shape_err("project_query", self.d_model, x.len()));
        }
        vecmat(x, &self.w_q[head])
    }

    /// Encoder-side `(key, value)` for one encoder state.
    pub fn project_memory(&self, enc: &[f64], head: usize) -> Result<(DenseVector, DenseVector)> {
        self.check_head(head)?;
        if enc.len() != self.d_enc {
            return Err(shape_err("project_memory", self.d_enc, enc.len()));
        }
        Ok((vecmat(enc, &self.w_k[head])?, vecmat(enc, &self.w_v[head])?))
    }
}
