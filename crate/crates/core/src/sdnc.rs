//! The streaming engine: a stateless controller writing to per-head
//! write-once memories and reading them back by content, one token at a
//! time.
//!
//! Per head, a step projects the token to `(q, k, v)`, appends `(k, v)` and
//! then reads with `q`. Appending first lets position `t` attend to itself,
//! so the read covers exactly the prefix `1..=t`.
//!
//! An optional second family of memories holds projected encoder states.
//! Those are filled once by [`SdncEngine::load_encoder_memory`], sealed, and
//! read by [`SdncEngine::cross_step`] without touching the self memories.

use crate::attention::concat_heads_and_mix;
use crate::controller::{project, CrossLayerParams, LayerParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::memory::{ScaleVariant, WriteOnceMemory};

/// Order of the write and the read inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepOrder {
    #[default]
    AppendThenRead,
    /// Reads only strictly earlier slots. The first step reads nothing and
    /// yields a zero readout. Kept for negative controls.
    ReadThenAppend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineOptions {
    pub scale: ScaleVariant,
    pub order: StepOrder,
}

#[derive(Debug, Clone)]
struct EncoderMemory {
    params: CrossLayerParams,
    heads: Vec<WriteOnceMemory>,
}

#[derive(Debug, Clone)]
pub struct SdncEngine {
    params: LayerParams,
    options: EngineOptions,
    memories: Vec<WriteOnceMemory>,
    encoder: Option<EncoderMemory>,
    steps: usize,
}

impl SdncEngine {
    pub fn new(params: LayerParams) -> Self {
        Self::with_options(params, EngineOptions::default())
    }

    pub fn with_options(params: LayerParams, options: EngineOptions) -> Self {
        let memories = (0..params.heads())
            .map(|_| WriteOnceMemory::new(params.d_k(), params.d_v()))
            .collect();
        Self {
            params,
            options,
            memories,
            encoder: None,
            steps: 0,
        }
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn self_memory(&self, head: usize) -> &WriteOnceMemory {
        &self.memories[head]
    }

    pub fn encoder_memory(&self, head: usize) -> Option<&WriteOnceMemory> {
        self.encoder.as_ref().map(|e| &e.heads[head])
    }

    fn scale(&self) -> f64 {
        self.options.scale.factor(self.params.d_k(), self.params.d_v())
    }

    /// Processes one token and returns its mixed output `z_t`.
    pub fn step(&mut self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.params.d_model() {
            return Err(shape_err("step", self.params.d_model(), x.len()));
        }
        let scale = self.scale();
        let mut reads = Vec::with_capacity(self.params.heads());
        for (h, mem) in self.memories.iter_mut().enumerate() {
            let tok = project(x, &self.params, h)?;
            let readout = match self.options.order {
                StepOrder::AppendThenRead => {
                    mem.append(&tok.k, &tok.v)?;
                    mem.content_read(&tok.q, scale)?.readout
                }
                StepOrder::ReadThenAppend => {
                    let r = if mem.is_empty() {
                        DenseVector::zeros(mem.d_v())
                    } else {
                        mem.content_read(&tok.q, scale)?.readout
                    };
                    mem.append(&tok.k, &tok.v)?;
                    r
                }
            };
            reads.push(single_row(readout)?);
        }
        self.steps += 1;
        mix_row(&reads, self.params.w_o())
    }

    /// Runs a fresh engine over every row of `x` in order.
    pub fn run(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.steps != 0 {
            return Err(Error::NonFreshEngine(self.steps));
        }
        if x.cols() != self.params.d_model() {
            return Err(shape_err("run", self.params.d_model(), x.cols()));
        }
        let mut out = DenseMatrix::zeros(x.rows(), self.params.d_model());
        for t in 0..x.rows() {
            let z = self.step(x.row(t))?;
            out.row_mut(t).copy_from_slice(&z);
        }
        Ok(out)
    }

    /// Projects every encoder state into per-head `(key, value)` slots and
    /// seals the result.
    pub fn load_encoder_memory(&mut self, cross: CrossLayerParams, enc_states: &DenseMatrix) -> Result<()> {
        if self.encoder.is_some() {
            return Err(Error::AlreadyLoaded);
        }
        if enc_states.cols() != cross.d_enc() {
            return Err(shape_err("load_encoder_memory", cross.d_enc(), enc_states.cols()));
        }
        if enc_states.rows() == 0 {
            return Err(Error::EmptyMemory);
        }
        if cross.d_model() != self.params.d_model() {
            return Err(shape_err(
                "load_encoder_memory decoder width",
                self.params.d_model(),
                cross.d_model(),
            ));
        }
        let mut heads = Vec::with_capacity(cross.heads());
        for h in 0..cross.heads() {
            let mut mem = WriteOnceMemory::new(cross.d_k(), cross.d_v());
            for s in 0..enc_states.rows() {
                let (k, v) = cross.project_memory(enc_states.row(s), h)?;
                mem.append(&k, &v)?;
            }
            mem.seal();
            heads.push(mem);
        }
        self.encoder = Some(EncoderMemory { params: cross, heads });
        Ok(())
    }

    /// Reads the encoder memories with the cross queries of `x`. Leaves the
    /// self memories and the step count untouched.
    pub fn cross_step(&self, x: &[f64]) -> Result<DenseVector> {
        let enc = self.encoder.as_ref().ok_or(Error::EncoderMemoryMissing)?;
        if x.len() != enc.params.d_model() {
            return Err(shape_err("cross_step", enc.params.d_model(), x.len()));
        }
        let scale = self.options.scale.factor(enc.params.d_k(), enc.params.d_v());
        let reads = enc
            .heads
            .iter()
            .enumerate()
            .map(|(h, mem)| {
                let q = enc.params.project_query(x, h)?;
                single_row(mem.content_read(&q, scale)?.readout)
            })
            .collect::<Result<Vec<_>>>()?;
        mix_row(&reads, enc.params.w_o())
    }

    /// Append to encoder memory `head`. Always fails once loaded.
    pub fn append_encoder(&mut self, head: usize, key: &[f64], value: &[f64]) -> Result<usize> {
        let enc = self.encoder.as_mut().ok_or(Error::EncoderMemoryMissing)?;
        let limit = enc.heads.len();
        enc.heads
            .get_mut(head)
            .ok_or(Error::Index {
                what: "head",
                index: head,
                limit,
            })?
            .append(key, value)
    }
}

fn single_row(v: DenseVector) -> Result<DenseMatrix> {
    let n = v.len();
    DenseMatrix::new(1, n, v.into_vec())
}

fn mix_row(reads: &[DenseMatrix], w_o: &DenseMatrix) -> Result<DenseVector> {
    let z = concat_heads_and_mix(reads, w_o)?;
    Ok(z.row_vector(0))
}
