//! Dense vectors and matrices over `f64`.
//!
//! Every reduction in this module accumulates strictly left-to-right in
//! increasing index, starting from `0.0`. Two code paths that call these
//! kernels over the same operands therefore produce bit-identical results,
//! which is what the equivalence checks lean on.

use std::ops::{Deref, Index};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A probability vector: non-negative entries summing to one.
///
/// Only [`softmax_stable`] constructs these.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix.
///
/// A matrix may have zero rows (an empty sequence); operations that need at
/// least one row say so in their error contract.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(shape_err("DenseMatrix::new", "cols >= 1", cols));
        }
        if data.len() != rows * cols {
            return Err(shape_err("DenseMatrix::new", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(cols > 0, "matrix must have at least one column");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput)?;
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err("DenseMatrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> DenseVector {
        DenseVector(self.row(i).to_vec())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Largest element-wise absolute difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "max_abs_diff",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

/// Inner product, accumulated in increasing index.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax_stable(scores: &[f64]) -> Result<SimplexVector> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let mut total = 0.0;
    for e in &exps {
        total += e;
    }
    for e in &mut exps {
        *e /= total;
    }
    Ok(SimplexVector(exps))
}

/// `m · v`; each output is `Σ_j m[i,j]·v[j]` summed in increasing `j`.
pub fn matvec(m: &DenseMatrix, v: &[f64]) -> Result<DenseVector> {
    if m.cols != v.len() {
        return Err(shape_err("matvec", m.cols, v.len()));
    }
    if m.rows == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(DenseVector(
        (0..m.rows).map(|i| dot(m.row(i), v)).collect(),
    ))
}

/// `xᵀ · m` for a row vector `x`, i.e. `Σ_j x[j]·m[j,c]` in increasing `j`.
///
/// Same operands and order as `matvec(&m.transpose(), x)` without building
/// the transpose.
pub fn vecmat(x: &[f64], m: &DenseMatrix) -> Result<DenseVector> {
    if m.rows != x.len() {
        return Err(shape_err("vecmat", m.rows, x.len()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = vec![0.0; m.cols];
    for (c, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += xj * m.data[j * m.cols + c];
        }
        *o = acc;
    }
    Ok(DenseVector(out))
}

/// Standard product; element `(i,c)` is accumulated over the shared index in
/// increasing order, so row `i` equals `vecmat(a.row(i), b)` bit for bit.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a.cols, b.rows));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        for c in 0..b.cols {
            let mut acc = 0.0;
            for (k, aik) in ar.iter().enumerate() {
                acc += aik * b.data[k * b.cols + c];
            }
            out.data[i * b.cols + c] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for c in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, c);
                }
                out[i * b.cols() + c] = s;
            }
        }
        out
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_stable(&[0.0]).unwrap().as_slice(), &[1.0]);
        let u = softmax_stable(&[3.7, 3.7, 3.7]).unwrap();
        for w in u.iter() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_stable(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_errors() {
        assert_eq!(softmax_stable(&[]), Err(Error::EmptyInput));
        assert_eq!(
            softmax_stable(&[0.0, f64::NAN]),
            Err(Error::NonFiniteInput(1))
        );
        assert_eq!(
            softmax_stable(&[f64::INFINITY]),
            Err(Error::NonFiniteInput(0))
        );
    }

    #[test]
    fn softmax_extreme_range_stays_on_simplex() {
        let p = softmax_stable(&[700.0, -700.0, 699.0]).unwrap();
        assert!(p.iter().all(|w| *w >= 0.0 && w.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matvec_examples() {
        let id = DenseMatrix::identity(3);
        assert_eq!(matvec(&id, &[1.0, 2.0, 3.0]).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        let z = DenseMatrix::zeros(2, 2);
        assert_eq!(matvec(&z, &[5.0, 7.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let m = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let got = matvec(&m, &[1.0, 1.0]).unwrap();
        // scalar-loop oracle
        let want: Vec<f64> = (0..2)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..2 {
                    s += m.get(i, j) * 1.0;
                }
                s
            })
            .collect();
        assert_eq!(got.as_slice(), want.as_slice());
        assert_eq!(got.as_slice(), &[3.0, 7.0]);
        assert!(matches!(matvec(&m, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_examples() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&a, &DenseMatrix::identity(2)).unwrap(), a);
        let s = DenseMatrix::from_rows(&[[2.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(matmul(&s, &t).unwrap().as_slice(), &[6.0]);
        let perm = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let got = matmul(&a, &perm).unwrap();
        assert_eq!(got.as_slice(), naive_matmul(&a, &perm).as_slice());
        assert_eq!(got.as_slice(), &[2.0, 1.0, 4.0, 3.0]);
        assert!(matches!(
            matmul(&a, &DenseMatrix::zeros(3, 1)),
            Err(Error::Shape { .. })
        ));
    }

    fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |d| DenseMatrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -600.0f64..600.0,
        ) {
            let base = softmax_stable(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let moved = softmax_stable(&shifted).unwrap();
            for (a, b) in base.iter().zip(moved.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_is_simplex(v in prop::collection::vec(-700.0f64..700.0, 1..40)) {
            let p = softmax_stable(&v).unwrap();
            prop_assert!(p.iter().all(|w| *w >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn matmul_matches_naive_and_rowwise(a in matrix(6, 6), seed in 0u64..1000) {
            let cols = 1 + (seed as usize % 5);
            let data: Vec<f64> = (0..a.cols() * cols)
                .map(|i| ((i as f64 + seed as f64) * 0.37).sin())
                .collect();
            let b = DenseMatrix::new(a.cols(), cols, data).unwrap();
            let p = matmul(&a, &b).unwrap();
            let naive = naive_matmul(&a, &b);
            prop_assert_eq!(p.as_slice(), naive.as_slice());
            let bt = b.transpose();
            for i in 0..a.rows() {
                let via_matvec = matvec(&bt, a.row(i)).unwrap();
                let via_vecmat = vecmat(a.row(i), &b).unwrap();
                prop_assert_eq!(p.row(i), via_matvec.as_slice());
                prop_assert_eq!(p.row(i), via_vecmat.as_slice());
            }
        }
    }
}
