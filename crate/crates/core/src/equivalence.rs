//! Runs the batched attention path and the streaming memory path on the same
//! seeded instance and reports how far apart their outputs are.

use std::fmt;
use std::str::FromStr;

use crate::attention::{cross_attention, self_attention, AttentionOptions, Masking};
use crate::controller::{CrossLayerParams, LayerParams};
use crate::error::{Error, Result};
use crate::init;
use crate::linalg::DenseMatrix;
use crate::memory::ScaleVariant;
use crate::par::{self, Execution};
use crate::sdnc::{EngineOptions, SdncEngine, StepOrder};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    SelfAttention,
    Cross,
    /// `W_Q = W_K = W_V` and `d_k = d_v`: the read key is the controller's
    /// key and the memory holds a single track (stored keys equal values).
    Restricted,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SelfAttention => "self",
            Mode::Cross => "cross",
            Mode::Restricted => "paper-restricted",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(Mode::SelfAttention),
            "cross" => Ok(Mode::Cross),
            "paper-restricted" | "paper_restricted" => Ok(Mode::Restricted),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Deliberate corruptions of one path, used to show the harness can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Batched path attends over the whole sequence.
    NoCausalPrefix,
    /// Streaming path scales reads by `1/√d_v` while batched keeps `1/√d_k`.
    StreamScaleDv,
    /// Streaming path reads before it appends.
    ReadBeforeAppend,
}

impl Fault {
    pub fn name(self) -> &'static str {
        match self {
            Fault::None => "none",
            Fault::NoCausalPrefix => "no-causal-prefix",
            Fault::StreamScaleDv => "stream-scale-dv",
            Fault::ReadBeforeAppend => "read-before-append",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivConfig {
    pub seq_len: usize,
    /// Encoder length; only used in cross mode.
    pub enc_len: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
    pub seed: u64,
    pub tol: f64,
    pub mode: Mode,
    pub scale: ScaleVariant,
    pub fault: Fault,
}

impl Default for EquivConfig {
    fn default() -> Self {
        Self {
            seq_len: 8,
            enc_len: 5,
            d_model: 8,
            d_k: 8,
            d_v: 8,
            heads: 1,
            seed: 0,
            tol: DEFAULT_TOL,
            mode: Mode::SelfAttention,
            scale: ScaleVariant::Dk,
            fault: Fault::None,
        }
    }
}

impl EquivConfig {
    /// Config with `d_k = d_v = max(1, d_model / heads)`.
    pub fn split_heads(mode: Mode, seq_len: usize, d_model: usize, heads: usize, seed: u64) -> Self {
        let d_head = (d_model / heads).max(1);
        Self {
            seq_len,
            d_model,
            d_k: d_head,
            d_v: d_head,
            heads,
            seed,
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.seq_len, self.enc_len, self.d_model, self.d_k, self.d_v, self.heads];
        if dims.contains(&0) {
            return Err(Error::Config("dimensions must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.mode == Mode::Restricted && self.d_k != self.d_v {
            return Err(Error::Config("paper-restricted mode requires d_k = d_v".into()));
        }
        Ok(())
    }

    fn attention_options(&self) -> AttentionOptions {
        AttentionOptions {
            masking: if self.fault == Fault::NoCausalPrefix {
                Masking::Bidirectional
            } else {
                Masking::Causal
            },
            scale: self.scale,
            execution: Execution::Sequential,
        }
    }

    fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            scale: if self.fault == Fault::StreamScaleDv {
                ScaleVariant::Dv
            } else {
                self.scale
            },
            order: if self.fault == Fault::ReadBeforeAppend {
                StepOrder::ReadThenAppend
            } else {
                StepOrder::AppendThenRead
            },
        }
    }
}

/// Seeded self-attention instance: params are drawn first, then `X`.
pub fn self_instance(cfg: &EquivConfig) -> Result<(LayerParams, DenseMatrix)> {
    cfg.validate()?;
    let mut rng = init::rng(cfg.seed);
    let mut params = init::layer_params(&mut rng, cfg.d_model, cfg.d_k, cfg.d_v, cfg.heads)?;
    if cfg.mode == Mode::Restricted {
        let w_q = params.w_q().to_vec();
        params = LayerParams::new(
            cfg.d_model,
            cfg.d_k,
            cfg.d_v,
            w_q.clone(),
            w_q.clone(),
            w_q,
            params.w_o().clone(),
        )?;
    }
    let x = init::inputs(&mut rng, cfg.seq_len, cfg.d_model);
    Ok((params, x))
}

pub struct CrossInstance {
    pub params: LayerParams,
    pub cross: CrossLayerParams,
    pub x_dec: DenseMatrix,
    pub enc_states: DenseMatrix,
}

/// Seeded cross-attention instance; encoder width equals `d_model`.
pub fn cross_instance(cfg: &EquivConfig) -> Result<CrossInstance> {
    cfg.validate()?;
    let mut rng = init::rng(cfg.seed);
    let params = init::layer_params(&mut rng, cfg.d_model, cfg.d_k, cfg.d_v, cfg.heads)?;
    let cross = init::cross_params(&mut rng, cfg.d_model, cfg.d_model, cfg.d_k, cfg.d_v, cfg.heads)?;
    let x_dec = init::inputs(&mut rng, cfg.seq_len, cfg.d_model);
    let enc_states = init::inputs(&mut rng, cfg.enc_len, cfg.d_model);
    Ok(CrossInstance {
        params,
        cross,
        x_dec,
        enc_states,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub config: EquivConfig,
    pub max_abs_diff: f64,
    pub argmax_position: usize,
    pub argmax_component: usize,
    /// Largest component deviation at each output position.
    pub per_position_diffs: Vec<f64>,
    pub passed: bool,
}

impl EquivalenceReport {
    pub fn compare(config: EquivConfig, batched: &DenseMatrix, streamed: &DenseMatrix) -> Result<Self> {
        batched.max_abs_diff(streamed)?;
        let mut per_position_diffs = vec![0.0; batched.rows()];
        let (mut max_abs_diff, mut argmax_position, mut argmax_component) = (0.0, 0, 0);
        for (t, row_max) in per_position_diffs.iter_mut().enumerate() {
            for (i, (a, b)) in batched.row(t).iter().zip(streamed.row(t)).enumerate() {
                let d = (a - b).abs();
                // NaN on either path must fail, not slip past `>`.
                let d = if d.is_nan() { f64::INFINITY } else { d };
                if d > *row_max {
                    *row_max = d;
                }
                if d > max_abs_diff {
                    (max_abs_diff, argmax_position, argmax_component) = (d, t, i);
                }
            }
        }
        Ok(Self {
            config,
            max_abs_diff,
            argmax_position,
            argmax_component,
            per_position_diffs,
            passed: max_abs_diff <= config.tol,
        })
    }
}

pub fn check_self_equivalence(cfg: &EquivConfig) -> Result<EquivalenceReport> {
    if cfg.mode == Mode::Cross {
        return Err(Error::Config("self equivalence needs mode self or paper-restricted".into()));
    }
    let (params, x) = self_instance(cfg)?;
    compare_self_paths(cfg, params, &x)
}

/// Self-attention comparison on caller-supplied weights and inputs. The
/// dimension fields of `cfg` are only echoed; `params` and `x` rule.
pub fn compare_self_paths(cfg: &EquivConfig, params: LayerParams, x: &DenseMatrix) -> Result<EquivalenceReport> {
    let batched = self_attention(x, &params, cfg.attention_options())?.z;
    let streamed = SdncEngine::with_options(params, cfg.engine_options()).run(x)?;
    EquivalenceReport::compare(*cfg, &batched, &streamed)
}

pub fn check_cross_equivalence(cfg: &EquivConfig) -> Result<EquivalenceReport> {
    if cfg.mode != Mode::Cross {
        return Err(Error::Config("cross equivalence needs mode cross".into()));
    }
    let inst = cross_instance(cfg)?;
    let batched = cross_attention(&inst.x_dec, &inst.enc_states, &inst.cross, cfg.attention_options())?.z;
    let mut engine = SdncEngine::with_options(inst.params, cfg.engine_options());
    engine.load_encoder_memory(inst.cross, &inst.enc_states)?;
    let mut streamed = DenseMatrix::zeros(cfg.seq_len, cfg.d_model);
    for t in 0..cfg.seq_len {
        let z = engine.cross_step(inst.x_dec.row(t))?;
        streamed.row_mut(t).copy_from_slice(&z);
    }
    EquivalenceReport::compare(*cfg, &batched, &streamed)
}

/// Dispatches on `cfg.mode`.
pub fn check_equivalence(cfg: &EquivConfig) -> Result<EquivalenceReport> {
    match cfg.mode {
        Mode::Cross => check_cross_equivalence(cfg),
        _ => check_self_equivalence(cfg),
    }
}

/// Adds `1.0` to every component of row `perturb_position` (1-based) and
/// checks that no earlier output row moves: bit-exact on the streaming
/// path, within `1e-15` on the batched path.
pub fn check_causality(cfg: &EquivConfig, perturb_position: usize) -> Result<bool> {
    if perturb_position == 0 || perturb_position > cfg.seq_len {
        return Err(Error::Index {
            what: "perturb position",
            index: perturb_position,
            limit: cfg.seq_len,
        });
    }
    let (params, x) = self_instance(cfg)?;
    let mut y = x.clone();
    y.row_mut(perturb_position - 1).iter_mut().for_each(|e| *e += 1.0);

    let opts = cfg.attention_options();
    let batched = (
        self_attention(&x, &params, opts)?.z,
        self_attention(&y, &params, opts)?.z,
    );
    let streamed = (
        SdncEngine::with_options(params.clone(), cfg.engine_options()).run(&x)?,
        SdncEngine::with_options(params, cfg.engine_options()).run(&y)?,
    );
    for t in 0..perturb_position - 1 {
        if streamed.0.row(t) != streamed.1.row(t) {
            return Ok(false);
        }
        let moved = batched
            .0
            .row(t)
            .iter()
            .zip(batched.1.row(t))
            .any(|(a, b)| (a - b).abs() > 1e-15);
        if moved {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs every config; reports come back in input order regardless of
/// `exec`.
pub fn run_grid(cfgs: &[EquivConfig], exec: Execution) -> Result<Vec<EquivalenceReport>> {
    par::map(cfgs, exec, check_equivalence).into_iter().collect()
}

/// `T × d_model × H × seeds` grid with `d_k = d_v = max(1, d_model/H)`.
pub fn grid(mode: Mode, seq_lens: &[usize], d_models: &[usize], heads: &[usize], seeds: u64) -> Vec<EquivConfig> {
    let mut out = Vec::new();
    for &t in seq_lens {
        for &d in d_models {
            for &h in heads {
                for seed in 0..seeds {
                    out.push(EquivConfig::split_heads(mode, t, d, h, seed));
                }
            }
        }
    }
    out
}

/// Cross grid over `T × S × H × seeds` at a fixed `d_model`.
pub fn cross_grid(seq_lens: &[usize], enc_lens: &[usize], heads: &[usize], d_model: usize, seeds: u64) -> Vec<EquivConfig> {
    let mut out = Vec::new();
    for &t in seq_lens {
        for &s in enc_lens {
            for &h in heads {
                for seed in 0..seeds {
                    let mut cfg = EquivConfig::split_heads(Mode::Cross, t, d_model, h, seed);
                    cfg.enc_len = s;
                    out.push(cfg);
                }
            }
        }
    }
    out
}
