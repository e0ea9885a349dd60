//! Append-only external memory with content-based reads.
//!
//! Each slot holds a key row (`d_k`) and a value row (`d_v`). Slots are
//! written once, in order, and never modified. There is no overwrite,
//! erase or insert operation.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{dot, softmax_stable, DenseVector, SimplexVector};

/// Which width sets the read temperature `1/√width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleVariant {
    /// `1/√d_k`, the scaled dot-product convention.
    #[default]
    Dk,
    /// `1/√d_v`, scaling by value width.
    Dv,
}

impl ScaleVariant {
    pub fn factor(self, d_k: usize, d_v: usize) -> f64 {
        let width = match self {
            ScaleVariant::Dk => d_k,
            ScaleVariant::Dv => d_v,
        };
        1.0 / (width as f64).sqrt()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleVariant::Dk => "dk",
            ScaleVariant::Dv => "dv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteOnceMemory {
    d_k: usize,
    d_v: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
    len: usize,
    sealed: bool,
}

/// Read weights over the occupied slots and the resulting readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    pub weights: SimplexVector,
    pub readout: DenseVector,
}

impl WriteOnceMemory {
    pub fn new(d_k: usize, d_v: usize) -> Self {
        assert!(d_k > 0 && d_v > 0, "memory widths must be positive");
        Self {
            d_k,
            d_v,
            keys: Vec::new(),
            values: Vec::new(),
            len: 0,
            sealed: false,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn size(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Rejects all further appends. Irreversible.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Stores one `(key, value)` slot and returns its index.
    pub fn append(&mut self, key: &[f64], value: &[f64]) -> Result<usize> {
        if self.sealed {
            return Err(Error::SealedMemory);
        }
        if key.len() != self.d_k {
            return Err(shape_err("append key", self.d_k, key.len()));
        }
        if value.len() != self.d_v {
            return Err(shape_err("append value", self.d_v, value.len()));
        }
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.len += 1;
        Ok(self.len - 1)
    }

    pub fn key_row(&self, slot: usize) -> &[f64] {
        &self.keys[slot * self.d_k..(slot + 1) * self.d_k]
    }

    pub fn value_row(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.d_v..(slot + 1) * self.d_v]
    }

    /// `scale · ⟨key_j, query⟩` for every slot `j`.
    pub fn logits(&self, query: &[f64], scale: f64) -> Result<Vec<f64>> {
        if self.len == 0 {
            return Err(Error::EmptyMemory);
        }
        if query.len() != self.d_k {
            return Err(shape_err("content_read query", self.d_k, query.len()));
        }
        Ok((0..self.len)
            .map(|j| scale * dot(self.key_row(j), query))
            .collect())
    }

    /// Softmax over key similarities, then the weighted sum of value rows
    /// accumulated in slot order.
    pub fn content_read(&self, query: &[f64], scale: f64) -> Result<ReadResult> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("read scale must be positive, got {scale}")));
        }
        let weights = softmax_stable(&self.logits(query, scale)?)?;
        let readout = weighted_sum(&weights, |j| self.value_row(j), self.d_v);
        Ok(ReadResult {
            weights,
            readout: DenseVector::new(readout)?,
        })
    }
}

/// `Σ_j w[j]·row(j)`, accumulated in increasing `j` per component.
pub(crate) fn weighted_sum<'a>(w: &[f64], row: impl Fn(usize) -> &'a [f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for (j, wj) in w.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(row(j)) {
            *o += wj * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn append_returns_slots() {
        let mut m = WriteOnceMemory::new(2, 3);
        assert_eq!(m.size(), 0);
        assert_eq!(m.append(&[1.0, 2.0], &[0.0, 0.0, 1.0]).unwrap(), 0);
        assert_eq!(m.append(&[3.0, 4.0], &[1.0, 0.0, 0.0]).unwrap(), 1);
        m.append(&[3.0, 4.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.size(), 3);
        assert!(matches!(m.append(&[1.0], &[0.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(m.append(&[1.0, 2.0], &[0.0; 2]), Err(Error::Shape { .. })));
        assert_eq!(m.size(), 3);
    }

    #[test]
    fn sealed_memory_rejects_appends() {
        let mut m = WriteOnceMemory::new(1, 1);
        m.append(&[1.0], &[2.0]).unwrap();
        m.seal();
        assert_eq!(m.append(&[1.0], &[2.0]), Err(Error::SealedMemory));
        assert_eq!(m.size(), 1);
    }

    #[test]
    fn rows_survive_later_appends() {
        let mut m = WriteOnceMemory::new(3, 2);
        m.append(&[0.1, 0.2, 0.3], &[-1.0, 1.0]).unwrap();
        let (k0, v0) = (m.key_row(0).to_vec(), m.value_row(0).to_vec());
        for i in 0..100 {
            let f = i as f64;
            m.append(&[f, f + 1.0, f * 0.5], &[f.sin(), f.cos()]).unwrap();
        }
        assert_eq!(m.key_row(0), k0.as_slice());
        assert_eq!(m.value_row(0), v0.as_slice());
    }

    #[test]
    fn read_examples() {
        let mut m = WriteOnceMemory::new(2, 2);
        assert_eq!(m.content_read(&[1.0, 0.0], 1.0), Err(Error::EmptyMemory));
        m.append(&[0.4, -0.3], &[7.0, -2.5]).unwrap();
        let r = m.content_read(&[10.0, 3.0], 0.5).unwrap();
        assert_eq!(r.weights.as_slice(), &[1.0]);
        assert_eq!(r.readout.as_slice(), &[7.0, -2.5]);

        let mut m = WriteOnceMemory::new(2, 2);
        m.append(&[0.4, -0.3], &[1.0, 4.0]).unwrap();
        m.append(&[0.4, -0.3], &[3.0, 0.0]).unwrap();
        let r = m.content_read(&[1.5, 2.0], 0.7).unwrap();
        assert_eq!(r.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(r.readout.as_slice(), &[2.0, 2.0]);
        assert!(matches!(m.content_read(&[1.0], 1.0), Err(Error::Shape { .. })));

        let mut m = WriteOnceMemory::new(1, 2);
        m.append(&[0.0], &[1.0, 0.0]).unwrap();
        m.append(&[1.0], &[0.0, 1.0]).unwrap();
        let r = m.content_read(&[3f64.ln()], 1.0).unwrap();
        assert!((r.weights[0] - 0.25).abs() < 1e-15);
        assert!((r.weights[1] - 0.75).abs() < 1e-15);
        assert!((r.readout[0] - 0.25).abs() < 1e-15);
        assert!((r.readout[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scale_variants() {
        assert_eq!(ScaleVariant::Dk.factor(4, 9), 0.5);
        assert_eq!(ScaleVariant::Dv.factor(4, 9), 1.0 / 3.0);
    }

    fn filled(rows: &[(Vec<f64>, Vec<f64>)]) -> WriteOnceMemory {
        let mut m = WriteOnceMemory::new(rows[0].0.len(), rows[0].1.len());
        for (k, v) in rows {
            m.append(k, v).unwrap();
        }
        m
    }

    fn slots(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>)>> {
        prop::collection::vec(
            (
                prop::collection::vec(-3.0f64..3.0, 3),
                prop::collection::vec(-5.0f64..5.0, 2),
            ),
            n,
        )
    }

    proptest! {
        #[test]
        fn read_is_pure_and_bounded(
            rows in slots(1..30),
            q in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let m = filled(&rows);
            let a = m.content_read(&q, 0.6).unwrap();
            let b = m.content_read(&q, 0.6).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.weights.len(), m.size());
            prop_assert!(a.weights.iter().all(|w| *w >= 0.0));
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..2 {
                let lo = rows.iter().map(|r| r.1[i]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r.1[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a.readout[i] >= lo - 1e-12 && a.readout[i] <= hi + 1e-12);
            }
        }

        #[test]
        fn logit_prefix_is_stable(
            rows in slots(1..20),
            extra in slots(1..20),
            q in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let mut m = filled(&rows);
            let before = m.logits(&q, 0.9).unwrap();
            for (k, v) in &extra {
                m.append(k, v).unwrap();
            }
            let after = m.logits(&q, 0.9).unwrap();
            prop_assert_eq!(before.as_slice(), &after[..rows.len()]);
        }
    }
}
