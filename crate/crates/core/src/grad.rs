//! Reverse pass of causal multi-head self-attention and a central
//! finite-difference check against it.
//!
//! The scalar objective is `L = Σ_{t,i} G[t,i]·Z[t,i]` for a fixed upstream
//! matrix `G`, so `∂L/∂Z = G`. Through one head, with `α_t` the prefix
//! softmax at row `t`:
//!
//! ```text
//! dα_tj = ⟨dO_t, v_j⟩                      dV_j += α_tj · dO_t
//! ds_tj = α_tj · (dα_tj − ⟨α_t, dα_t⟩)
//! dQ_t  = scale · Σ_j ds_tj · k_j          dK_j += scale · ds_tj · q_t
//! ```
//!
//! and the projections pull back as `dW = Xᵀ·dP`, `dX += dP·Wᵀ`.

use std::fmt;

use rand::seq::index;

use crate::attention::{causal_self_attention, self_attention_head, AttentionOptions};
use crate::controller::{project_sequence, LayerParams};
use crate::ddouble::DoubleDouble;
use crate::equivalence::{self_instance, EquivConfig};
use crate::error::{shape_err, Error, Result};
use crate::init;
use crate::linalg::{dot, matmul, DenseMatrix};
use crate::memory::ScaleVariant;
use crate::par::{self, Execution};

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;
/// Minimum probe count when subsampling.
pub const MIN_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub dx: DenseMatrix,
    pub dw_q: Vec<DenseMatrix>,
    pub dw_k: Vec<DenseMatrix>,
    pub dw_v: Vec<DenseMatrix>,
    pub dw_o: DenseMatrix,
}

impl GradientBundle {
    /// Gradient for one scalar parameter.
    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::X { row, col } => self.dx.get(row, col),
            ParamId::Wq { head, row, col } => self.dw_q[head].get(row, col),
            ParamId::Wk { head, row, col } => self.dw_k[head].get(row, col),
            ParamId::Wv { head, row, col } => self.dw_v[head].get(row, col),
            ParamId::Wo { row, col } => self.dw_o.get(row, col),
        }
    }

    fn all(&self) -> impl Iterator<Item = &DenseMatrix> {
        std::iter::once(&self.dx)
            .chain(&self.dw_q)
            .chain(&self.dw_k)
            .chain(&self.dw_v)
            .chain(std::iter::once(&self.dw_o))
    }

    pub fn is_finite(&self) -> bool {
        self.all().all(|m| m.as_slice().iter().all(|v| v.is_finite()))
    }
}

/// `L = Σ upstream ⊙ Z` with `Z` the causal self-attention output.
pub fn attention_loss(x: &DenseMatrix, params: &LayerParams, upstream: &DenseMatrix) -> Result<f64> {
    let z = causal_self_attention(x, params)?.z;
    if z.shape() != upstream.shape() {
        return Err(shape_err(
            "attention_loss",
            format!("{:?}", z.shape()),
            format!("{:?}", upstream.shape()),
        ));
    }
    Ok(dot(z.as_slice(), upstream.as_slice()))
}

fn add_into(acc: &mut DenseMatrix, m: &DenseMatrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *a += b;
    }
}

/// Gradients of `Σ upstream ⊙ Z` with respect to `X` and every weight.
pub fn attention_backward(x: &DenseMatrix, params: &LayerParams, upstream: &DenseMatrix) -> Result<GradientBundle> {
    let (t_len, d_model) = (x.rows(), params.d_model());
    if x.cols() != d_model {
        return Err(shape_err("attention_backward X", d_model, x.cols()));
    }
    if upstream.shape() != (t_len, d_model) {
        return Err(shape_err(
            "attention_backward upstream",
            format!("{:?}", (t_len, d_model)),
            format!("{:?}", upstream.shape()),
        ));
    }
    let (heads, d_v) = (params.heads(), params.d_v());
    let opts = AttentionOptions::default();
    let scale = ScaleVariant::Dk.factor(params.d_k(), d_v);

    let head_out: Vec<_> = (0..heads)
        .map(|h| self_attention_head(x, params, h, opts))
        .collect::<Result<_>>()?;
    let mut cat = DenseMatrix::zeros(t_len, heads * d_v);
    for t in 0..t_len {
        for (h, ho) in head_out.iter().enumerate() {
            cat.row_mut(t)[h * d_v..(h + 1) * d_v].copy_from_slice(ho.out.row(t));
        }
    }
    let dw_o = matmul(&cat.transpose(), upstream)?;
    let dcat = matmul(upstream, &params.w_o().transpose())?;

    let xt = x.transpose();
    let mut dx = DenseMatrix::zeros(t_len, d_model);
    let (mut dw_q, mut dw_k, mut dw_v) = (Vec::new(), Vec::new(), Vec::new());
    for (h, ho) in head_out.iter().enumerate() {
        let p = project_sequence(x, params, h)?;
        let mut dq = DenseMatrix::zeros(t_len, params.d_k());
        let mut dk = DenseMatrix::zeros(t_len, params.d_k());
        let mut dv = DenseMatrix::zeros(t_len, d_v);
        for t in 0..t_len {
            let d_out = &dcat.row(t)[h * d_v..(h + 1) * d_v];
            let alpha = &ho.weights.row(t)[..=t];
            let dalpha: Vec<f64> = (0..=t).map(|j| dot(d_out, p.v.row(j))).collect();
            for (j, a) in alpha.iter().enumerate() {
                for (g, o) in dv.row_mut(j).iter_mut().zip(d_out) {
                    *g += a * o;
                }
            }
            let mean = dot(alpha, &dalpha);
            for j in 0..=t {
                let ds = alpha[j] * (dalpha[j] - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                for (g, k) in dq.row_mut(t).iter_mut().zip(p.k.row(j)) {
                    *g += ds * k;
                }
                for (g, q) in dk.row_mut(j).iter_mut().zip(p.q.row(t)) {
                    *g += ds * q;
                }
            }
        }
        dw_q.push(matmul(&xt, &dq)?);
        dw_k.push(matmul(&xt, &dk)?);
        dw_v.push(matmul(&xt, &dv)?);
        add_into(&mut dx, &matmul(&dq, &params.w_q()[h].transpose())?);
        add_into(&mut dx, &matmul(&dk, &params.w_k()[h].transpose())?);
        add_into(&mut dx, &matmul(&dv, &params.w_v()[h].transpose())?);
    }
    Ok(GradientBundle {
        dx,
        dw_q,
        dw_k,
        dw_v,
        dw_o,
    })
}

/// One scalar input of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    X { row: usize, col: usize },
    Wq { head: usize, row: usize, col: usize },
    Wk { head: usize, row: usize, col: usize },
    Wv { head: usize, row: usize, col: usize },
    Wo { row: usize, col: usize },
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ParamId::X { row, col } => write!(f, "X[{row},{col}]"),
            ParamId::Wq { head, row, col } => write!(f, "W_Q{head}[{row},{col}]"),
            ParamId::Wk { head, row, col } => write!(f, "W_K{head}[{row},{col}]"),
            ParamId::Wv { head, row, col } => write!(f, "W_V{head}[{row},{col}]"),
            ParamId::Wo { row, col } => write!(f, "W_O[{row},{col}]"),
        }
    }
}

/// Every scalar parameter in a fixed order: `X`, `W_Q`, `W_K`, `W_V`, `W_O`.
pub fn enumerate_params(x: &DenseMatrix, params: &LayerParams) -> Vec<ParamId> {
    let mut ids = Vec::new();
    let cells = |m: &DenseMatrix| {
        let cols = m.cols();
        (0..m.rows() * cols).map(move |i| (i / cols, i % cols))
    };
    ids.extend(cells(x).map(|(row, col)| ParamId::X { row, col }));
    for (head, m) in params.w_q().iter().enumerate() {
        ids.extend(cells(m).map(|(row, col)| ParamId::Wq { head, row, col }));
    }
    for (head, m) in params.w_k().iter().enumerate() {
        ids.extend(cells(m).map(|(row, col)| ParamId::Wk { head, row, col }));
    }
    for (head, m) in params.w_v().iter().enumerate() {
        ids.extend(cells(m).map(|(row, col)| ParamId::Wv { head, row, col }));
    }
    ids.extend(cells(params.w_o()).map(|(row, col)| ParamId::Wo { row, col }));
    ids
}

fn perturbed(x: &DenseMatrix, params: &LayerParams, id: ParamId, delta: f64) -> (DenseMatrix, LayerParams) {
    let (mut x, mut params) = (x.clone(), params.clone());
    let heads = params.heads();
    let (m, row, col) = match id {
        ParamId::X { row, col } => (&mut x, row, col),
        ParamId::Wq { head, row, col } => (params.matrices_mut().swap_remove(head), row, col),
        ParamId::Wk { head, row, col } => (params.matrices_mut().swap_remove(heads + head), row, col),
        ParamId::Wv { head, row, col } => (params.matrices_mut().swap_remove(2 * heads + head), row, col),
        ParamId::Wo { row, col } => (params.matrices_mut().swap_remove(3 * heads), row, col),
    };
    let v = m.get(row, col);
    m.set(row, col, v + delta);
    (x, params)
}

type Grid = Vec<Vec<DoubleDouble>>;

fn widen(m: &DenseMatrix) -> Grid {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&v| DoubleDouble::from_f64(v)).collect())
        .collect()
}

fn dd_sum(n: usize, f: impl Fn(usize) -> DoubleDouble) -> DoubleDouble {
    (0..n).fold(DoubleDouble::ZERO, |acc, i| acc + f(i))
}

fn dd_matmul(a: &Grid, b: &Grid) -> Grid {
    let cols = b[0].len();
    a.iter()
        .map(|row| (0..cols).map(|c| dd_sum(row.len(), |k| row[k] * b[k][c])).collect())
        .collect()
}

/// `L` evaluated in double-double arithmetic by a direct transcription of
/// causal multi-head attention, with `delta` added to parameter `id`
/// exactly. Shares no kernels with the `f64` path.
pub fn reference_loss(
    x: &DenseMatrix,
    params: &LayerParams,
    upstream: &DenseMatrix,
    perturb: Option<(ParamId, DoubleDouble)>,
) -> Result<DoubleDouble> {
    if x.cols() != params.d_model() || upstream.shape() != x.shape() {
        return Err(shape_err(
            "reference_loss",
            format!("{:?}", (x.rows(), params.d_model())),
            format!("{:?} / {:?}", x.shape(), upstream.shape()),
        ));
    }
    let mut xs = widen(x);
    let mut wq: Vec<Grid> = params.w_q().iter().map(widen).collect();
    let mut wk: Vec<Grid> = params.w_k().iter().map(widen).collect();
    let mut wv: Vec<Grid> = params.w_v().iter().map(widen).collect();
    let mut wo = widen(params.w_o());
    if let Some((id, delta)) = perturb {
        let cell = match id {
            ParamId::X { row, col } => &mut xs[row][col],
            ParamId::Wq { head, row, col } => &mut wq[head][row][col],
            ParamId::Wk { head, row, col } => &mut wk[head][row][col],
            ParamId::Wv { head, row, col } => &mut wv[head][row][col],
            ParamId::Wo { row, col } => &mut wo[row][col],
        };
        *cell = *cell + delta;
    }
    let (t_len, d_v) = (x.rows(), params.d_v());
    let scale = DoubleDouble::from_f64(ScaleVariant::Dk.factor(params.d_k(), d_v));
    let mut cat = vec![vec![DoubleDouble::ZERO; params.heads() * d_v]; t_len];
    for h in 0..params.heads() {
        let q = dd_matmul(&xs, &wq[h]);
        let k = dd_matmul(&xs, &wk[h]);
        let v = dd_matmul(&xs, &wv[h]);
        for t in 0..t_len {
            let scores: Vec<DoubleDouble> = (0..=t)
                .map(|j| scale * dd_sum(q[t].len(), |c| q[t][c] * k[j][c]))
                .collect();
            let max = scores
                .iter()
                .copied()
                .fold(scores[0], |m, s| if s.hi > m.hi { s } else { m });
            let exps: Vec<DoubleDouble> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total = dd_sum(exps.len(), |j| exps[j]);
            for c in 0..d_v {
                cat[t][h * d_v + c] = dd_sum(t + 1, |j| exps[j] / total * v[j][c]);
            }
        }
    }
    let z = dd_matmul(&cat, &wo);
    Ok(dd_sum(t_len, |t| {
        dd_sum(params.d_model(), |c| DoubleDouble::from_f64(upstream.get(t, c)) * z[t][c])
    }))
}

/// Central difference with the objective evaluated in double-double and
/// the ±eps perturbation applied exactly.
pub fn reference_numeric_gradient(
    x: &DenseMatrix,
    params: &LayerParams,
    upstream: &DenseMatrix,
    id: ParamId,
    eps: f64,
) -> Result<f64> {
    let step = DoubleDouble::from_f64(eps);
    let plus = reference_loss(x, params, upstream, Some((id, step)))?;
    let minus = reference_loss(x, params, upstream, Some((id, -step)))?;
    Ok(((plus - minus) / DoubleDouble::from_f64(2.0 * eps)).to_f64())
}

/// Central difference `(L(p+eps) − L(p−eps)) / (2·eps)` in plain `f64`.
pub fn numeric_gradient(
    x: &DenseMatrix,
    params: &LayerParams,
    upstream: &DenseMatrix,
    id: ParamId,
    eps: f64,
) -> Result<f64> {
    let (xp, pp) = perturbed(x, params, id, eps);
    let (xm, pm) = perturbed(x, params, id, -eps);
    let plus = attention_loss(&xp, &pp, upstream)?;
    let minus = attention_loss(&xm, &pm, upstream)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Arithmetic used to evaluate the objective at the probe points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdPrecision {
    /// Plain `f64`; roundoff in `L(p±eps)` is amplified by `1/eps`.
    Double,
    /// Double-double reference evaluation.
    #[default]
    DoubleDouble,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub eps: f64,
    pub precision: FdPrecision,
    pub threshold: f64,
    /// Probe a seeded subsample of this many entries (at least
    /// [`MIN_SAMPLES`]); `None` probes every entry.
    pub samples: Option<usize>,
    pub execution: Execution,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            precision: FdPrecision::DoubleDouble,
            threshold: DEFAULT_THRESHOLD,
            samples: None,
            execution: Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_parameter: String,
    pub eps: f64,
    pub threshold: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Seeded upstream matrix drawn from a separate stream of the instance seed.
pub fn seeded_upstream(cfg: &EquivConfig) -> DenseMatrix {
    let mut rng = init::rng(cfg.seed);
    rng.set_stream(1);
    init::inputs(&mut rng, cfg.seq_len, cfg.d_model)
}

/// Compares [`attention_backward`] with central differences for one
/// instance. The worst entry is the first maximum in enumeration order.
pub fn finite_diff_check_with(
    x: &DenseMatrix,
    params: &LayerParams,
    upstream: &DenseMatrix,
    opts: FdOptions,
    sample_seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-8..=1e-3).contains(&opts.eps) {
        return Err(Error::Config(format!("eps must lie in [1e-8, 1e-3], got {}", opts.eps)));
    }
    let analytic = attention_backward(x, params, upstream)?;
    let mut ids = enumerate_params(x, params);
    if let Some(n) = opts.samples {
        let n = n.max(MIN_SAMPLES);
        if n < ids.len() {
            let mut rng = init::rng(sample_seed);
            rng.set_stream(2);
            let mut picked = index::sample(&mut rng, ids.len(), n).into_vec();
            picked.sort_unstable();
            ids = picked.into_iter().map(|i| ids[i]).collect();
        }
    }
    let errs: Vec<f64> = par::map(&ids, opts.execution, |&id| {
        let numeric = match opts.precision {
            FdPrecision::Double => numeric_gradient(x, params, upstream, id, opts.eps),
            FdPrecision::DoubleDouble => reference_numeric_gradient(x, params, upstream, id, opts.eps),
        };
        numeric.map(|n| relative_error(analytic.get(id), n))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (mut worst, mut max_rel_err) = (0, 0.0);
    for (i, e) in errs.iter().enumerate() {
        if *e > max_rel_err {
            (worst, max_rel_err) = (i, *e);
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_parameter: ids.get(worst).map(ToString::to_string).unwrap_or_default(),
        eps: opts.eps,
        threshold: opts.threshold,
        probes: ids.len(),
        passed: max_rel_err <= opts.threshold,
    })
}

/// Finite-difference check on the seeded instance described by `cfg`.
pub fn finite_diff_check(cfg: &EquivConfig, opts: FdOptions) -> Result<GradCheckReport> {
    let (params, x) = self_instance(cfg)?;
    let upstream = seeded_upstream(cfg);
    finite_diff_check_with(&x, &params, &upstream, opts, cfg.seed)
}
