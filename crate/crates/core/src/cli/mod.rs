//! Command-line front end.
//!
//! Exit codes: 0 when every check passed, 1 when a check failed, 2 on a
//! usage or I/O error.

pub mod bench;
pub mod report;
pub mod weights;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::equivalence::{
    check_causality, compare_self_paths, run_grid, EquivConfig, EquivalenceReport, Mode, DEFAULT_TOL,
};
use crate::error::Error;
use crate::grad::{finite_diff_check, FdOptions, FdPrecision, GradCheckReport};
use crate::init;
use crate::memory::ScaleVariant;
use crate::par::{self, Execution};

pub use report::ReportLine;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sdnc", version, about = "Batched attention vs. streaming write-once memory reads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare batched attention with the streaming engine.
    Equiv(EquivArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradArgs),
    /// Time the batched and streamed paths.
    Bench(BenchArgs),
    /// Write seeded weights to a file.
    GenWeights(GenArgs),
}

#[derive(Debug, Args)]
struct Dims {
    /// Defaults to 8 (4 for gradcheck).
    #[arg(long)]
    d_model: Option<usize>,
    /// Defaults to max(1, d_model / heads).
    #[arg(long)]
    d_k: Option<usize>,
    /// Defaults to max(1, d_model / heads).
    #[arg(long)]
    d_v: Option<usize>,
    /// Defaults to 1 (2 for gradcheck).
    #[arg(long)]
    heads: Option<usize>,
}

impl Dims {
    fn resolve_or(&self, d_model: usize, heads: usize) -> Result<(usize, usize, usize, usize), String> {
        let (d_model, heads) = (self.d_model.unwrap_or(d_model), self.heads.unwrap_or(heads));
        if d_model == 0 || heads == 0 {
            return Err("--d-model and --heads must be at least 1".into());
        }
        let split = (d_model / heads).max(1);
        let (d_k, d_v) = (self.d_k.unwrap_or(split), self.d_v.unwrap_or(split));
        if d_k == 0 || d_v == 0 {
            return Err("--d-k and --d-v must be at least 1".into());
        }
        Ok((d_model, d_k, d_v, heads))
    }

    fn resolve(&self) -> Result<(usize, usize, usize, usize), String> {
        self.resolve_or(8, 1)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "self")]
    SelfAttention,
    Cross,
    Restricted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Dk,
    Dv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Extended,
    F64,
}

#[derive(Debug, Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    #[command(flatten)]
    dims: Dims,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run seeds `seed..seed+seeds`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, value_enum, default_value = "self")]
    mode: ModeArg,
    /// Encoder length; cross mode only.
    #[arg(long)]
    enc_len: Option<usize>,
    #[arg(long, value_enum, default_value = "dk")]
    scale_variant: ScaleArg,
    /// Also sweep every perturbation position for causality.
    #[arg(long)]
    causality: bool,
    /// Use weights from a file instead of seeded ones (self modes only).
    #[arg(long, conflicts_with_all = ["d_model", "d_k", "d_v", "heads"])]
    weights: Option<PathBuf>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct GradArgs {
    #[arg(long, default_value_t = 6)]
    seq_len: usize,
    #[command(flatten)]
    dims: Dims,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = crate::grad::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = crate::grad::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Probe a seeded subsample of this many entries (at least 200).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum, default_value = "extended")]
    precision: PrecisionArg,
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    seq_len: usize,
    #[command(flatten)]
    dims: Dims,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    dims: Dims,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<Vec<ReportLine>, Failure>;

/// Parses `args` (including the program name) and runs the command,
/// writing report lines to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Equiv(a) => cmd_equiv(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::GenWeights(a) => cmd_gen_weights(&a),
    };
    match result {
        Ok(lines) => {
            let mut all_passed = true;
            for line in &lines {
                if line.passed() == Some(false) {
                    all_passed = false;
                }
                if writeln!(out, "{line}").is_err() {
                    return EXIT_USAGE;
                }
            }
            if all_passed {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Io(msg)) => {
            let _ = writeln!(err, "io error: {msg}");
            EXIT_USAGE
        }
    }
}

fn execution(parallel: bool) -> Execution {
    if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

pub fn equivalence_line(r: &EquivalenceReport) -> ReportLine {
    let c = &r.config;
    let check = match c.mode {
        Mode::Cross => "cross_equivalence",
        _ => "self_equivalence",
    };
    let mut line = ReportLine::new(check)
        .with("mode", c.mode)
        .with("seed", c.seed)
        .with("T", c.seq_len);
    if c.mode == Mode::Cross {
        line.push("S", c.enc_len);
    }
    line.with("d_model", c.d_model)
        .with("d_k", c.d_k)
        .with("d_v", c.d_v)
        .with("H", c.heads)
        .with("scale", c.scale.name())
        .with_f64("tol", c.tol)
        .with_f64("max_abs_diff", r.max_abs_diff)
        .with("argmax_t", r.argmax_position)
        .with("argmax_i", r.argmax_component)
        .with("passed", r.passed)
}

pub fn gradcheck_line(cfg: &EquivConfig, r: &GradCheckReport) -> ReportLine {
    ReportLine::new("gradcheck")
        .with("seed", cfg.seed)
        .with("T", cfg.seq_len)
        .with("d_model", cfg.d_model)
        .with("d_k", cfg.d_k)
        .with("d_v", cfg.d_v)
        .with("H", cfg.heads)
        .with_f64("eps", r.eps)
        .with_f64("threshold", r.threshold)
        .with("probes", r.probes)
        .with_f64("max_rel_err", r.max_rel_err)
        .with("worst", &r.worst_parameter)
        .with("passed", r.passed)
}

fn cmd_equiv(a: &EquivArgs) -> CmdResult {
    let mode = match a.mode {
        ModeArg::SelfAttention => Mode::SelfAttention,
        ModeArg::Cross => Mode::Cross,
        ModeArg::Restricted => Mode::Restricted,
    };
    if a.enc_len.is_some() && mode != Mode::Cross {
        return Err(Failure::Usage("--enc-len requires --mode cross".into()));
    }
    if a.weights.is_some() && mode == Mode::Cross {
        return Err(Failure::Usage("--weights cannot be used with --mode cross".into()));
    }
    if a.causality && mode == Mode::Cross {
        return Err(Failure::Usage("--causality applies to self-attention modes".into()));
    }
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let loaded = match &a.weights {
        Some(path) => Some(weights::load(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?),
        None => None,
    };
    let (d_model, d_k, d_v, heads) = match &loaded {
        Some(p) => (p.d_model(), p.d_k(), p.d_v(), p.heads()),
        None => a.dims.resolve().map_err(Failure::Usage)?,
    };
    let base = EquivConfig {
        seq_len: a.seq_len,
        enc_len: a.enc_len.unwrap_or(EquivConfig::default().enc_len),
        d_model,
        d_k,
        d_v,
        heads,
        seed: a.seed,
        tol: a.tol,
        mode,
        scale: match a.scale_variant {
            ScaleArg::Dk => ScaleVariant::Dk,
            ScaleArg::Dv => ScaleVariant::Dv,
        },
        ..EquivConfig::default()
    };
    base.validate()?;
    if let Some(p) = &loaded {
        if mode == Mode::Restricted && (p.w_q() != p.w_k() || p.w_q() != p.w_v()) {
            return Err(Failure::Usage("paper-restricted mode needs W_Q = W_K = W_V in the weight file".into()));
        }
    }
    let seeds = a.seed..a.seed.saturating_add(a.seeds);
    let cfgs: Vec<EquivConfig> = seeds.map(|seed| EquivConfig { seed, ..base }).collect();
    let exec = execution(a.parallel);

    let reports = match &loaded {
        None => run_grid(&cfgs, exec)?,
        Some(params) => par::map(&cfgs, exec, |cfg| {
            let mut rng = init::rng(cfg.seed);
            rng.set_stream(3);
            let x = init::inputs(&mut rng, cfg.seq_len, cfg.d_model);
            compare_self_paths(cfg, params.clone(), &x)
        })
        .into_iter()
        .collect::<Result<_, _>>()?,
    };
    let mut lines = Vec::new();
    for (cfg, r) in cfgs.iter().zip(&reports) {
        lines.push(equivalence_line(r));
        if a.causality {
            let sweep = par::map_indexed(cfg.seq_len, exec, |i| check_causality(cfg, i + 1));
            for (i, ok) in sweep.into_iter().enumerate() {
                lines.push(
                    ReportLine::new("causality")
                        .with("seed", cfg.seed)
                        .with("T", cfg.seq_len)
                        .with("position", i + 1)
                        .with("passed", ok?),
                );
            }
        }
    }
    Ok(lines)
}

fn cmd_gradcheck(a: &GradArgs) -> CmdResult {
    let (d_model, d_k, d_v, heads) = a.dims.resolve_or(4, 2).map_err(Failure::Usage)?;
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    if a.threshold.is_nan() || a.threshold <= 0.0 {
        return Err(Failure::Usage("--threshold must be positive".into()));
    }
    let opts = FdOptions {
        eps: a.eps,
        precision: match a.precision {
            PrecisionArg::Extended => FdPrecision::DoubleDouble,
            PrecisionArg::F64 => FdPrecision::Double,
        },
        threshold: a.threshold,
        samples: a.samples,
        execution: execution(a.parallel),
    };
    let mut lines = Vec::new();
    for seed in a.seed..a.seed.saturating_add(a.seeds) {
        let cfg = EquivConfig {
            seq_len: a.seq_len,
            d_model,
            d_k,
            d_v,
            heads,
            seed,
            ..EquivConfig::default()
        };
        let r = finite_diff_check(&cfg, opts)?;
        lines.push(gradcheck_line(&cfg, &r));
    }
    Ok(lines)
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let (d_model, d_k, d_v, heads) = a.dims.resolve().map_err(Failure::Usage)?;
    if a.seq_len == 0 {
        return Err(Failure::Usage("--seq-len must be at least 1".into()));
    }
    let cfg = bench::BenchConfig {
        seq_len: a.seq_len,
        d_model,
        d_k,
        d_v,
        heads,
        seed: a.seed,
        repeat: a.repeat,
    };
    let r = bench::run_bench(&cfg)?;
    let head = |path: &str| {
        ReportLine::new("bench")
            .with("path", path)
            .with("T", cfg.seq_len)
            .with("d_model", d_model)
            .with("d_k", d_k)
            .with("d_v", d_v)
            .with("H", heads)
            .with("repeat", cfg.repeat)
    };
    let mut lines = vec![
        head("batched").with_f64("seconds", r.batched.as_secs_f64()),
        head("streamed").with_f64("seconds", r.streamed.as_secs_f64()),
    ];
    for (t, d) in &r.step_latency {
        lines.push(ReportLine::new("bench_step").with("t", t).with_f64("seconds", d.as_secs_f64()));
    }
    for (n, d) in &r.read_cost {
        lines.push(ReportLine::new("bench_read").with("T", n).with_f64("seconds", d.as_secs_f64()));
    }
    if let Some(e) = r.fit_exponent {
        lines.push(ReportLine::new("bench_fit").with_f64("read_exponent", e));
    }
    Ok(lines)
}

fn cmd_gen_weights(a: &GenArgs) -> CmdResult {
    let (d_model, d_k, d_v, heads) = a.dims.resolve().map_err(Failure::Usage)?;
    let mut rng = init::rng(a.seed);
    let params = init::layer_params(&mut rng, d_model, d_k, d_v, heads)?;
    weights::save(&a.out, &params).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    Ok(vec![ReportLine::new("gen_weights")
        .with("seed", a.seed)
        .with("d_model", d_model)
        .with("d_k", d_k)
        .with("d_v", d_v)
        .with("H", heads)
        .with("bytes", weights::file_len(d_model, d_k, d_v, heads))
        .with("passed", true)])
}
