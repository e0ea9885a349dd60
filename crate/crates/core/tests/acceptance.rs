//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use sdnc::cli;
use sdnc::controller::CrossLayerParams;
use sdnc::equivalence::{
    check_causality, cross_grid, grid, run_grid, EquivConfig, EquivalenceReport, Fault, Mode, DEFAULT_TOL,
};
use sdnc::grad::{finite_diff_check, FdOptions, GradCheckReport};
use sdnc::init;
use sdnc::memory::{ScaleVariant, WriteOnceMemory};
use sdnc::par::{self, Execution};
use sdnc::sdnc::SdncEngine;
use sdnc::Error;

const SEQ_LENS: [usize; 5] = [1, 2, 8, 32, 128];
const D_MODELS: [usize; 3] = [4, 16, 64];
const HEADS: [usize; 3] = [1, 2, 8];
const SEEDS: u64 = 100;

const CROSS_SEQ_LENS: [usize; 3] = [1, 3, 32];
const CROSS_ENC_LENS: [usize; 3] = [1, 5, 64];
const CROSS_HEADS: [usize; 3] = [1, 2, 4];
const CROSS_D_MODEL: usize = 16;
const CROSS_SEEDS: u64 = 50;

const CAUSAL_T: usize = 16;
const CAUSAL_SEEDS: u64 = 20;

const GRAD_SEQ_LENS: [usize; 3] = [1, 6, 12];
const GRAD_HEADS: [usize; 2] = [1, 2];
const GRAD_D_MODEL: usize = 4;
const GRAD_SEEDS: u64 = 20;
const GRAD_EPS: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;

const MEMORY_APPENDS: usize = 1000;
const SIMPLEX_TOL: f64 = 1e-12;

const NEGATIVE_MIN_DIFF: f64 = 1e-3;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn exec() -> Execution {
    if Execution::parallel_available() {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn worst(reports: &[EquivalenceReport]) -> Option<&EquivalenceReport> {
    reports
        .iter()
        .fold(None, |acc: Option<&EquivalenceReport>, r| match acc {
            Some(a) if a.max_abs_diff >= r.max_abs_diff => Some(a),
            _ => Some(r),
        })
}

fn summarize(reports: &[EquivalenceReport]) -> Outcome {
    let failed = reports.iter().filter(|r| !r.passed).count();
    let detail = match worst(reports) {
        Some(w) => format!(
            "{} cells, {failed} failed, max_abs_diff={:e} (T={} d_model={} H={} seed={})",
            reports.len(),
            w.max_abs_diff,
            w.config.seq_len,
            w.config.d_model,
            w.config.heads,
            w.config.seed
        ),
        None => "no cells".into(),
    };
    Outcome::new(failed == 0 && !reports.is_empty(), detail)
}

fn self_grid() -> Outcome {
    let cfgs = grid(Mode::SelfAttention, &SEQ_LENS, &D_MODELS, &HEADS, SEEDS);
    match run_grid(&cfgs, exec()) {
        Ok(r) => summarize(&r),
        Err(e) => Outcome::error(e),
    }
}

fn restricted_grid() -> Outcome {
    let short: Vec<usize> = SEQ_LENS.into_iter().filter(|&t| t <= 32).collect();
    let cfgs = grid(Mode::Restricted, &short, &D_MODELS, &HEADS, SEEDS);
    match run_grid(&cfgs, exec()) {
        Ok(r) => summarize(&r),
        Err(e) => Outcome::error(e),
    }
}

fn cross_equivalence() -> Outcome {
    let cfgs = cross_grid(&CROSS_SEQ_LENS, &CROSS_ENC_LENS, &CROSS_HEADS, CROSS_D_MODEL, CROSS_SEEDS);
    match run_grid(&cfgs, exec()) {
        Ok(r) => summarize(&r),
        Err(e) => Outcome::error(e),
    }
}

fn causality() -> Outcome {
    let cases: Vec<(u64, usize)> = (0..CAUSAL_SEEDS)
        .flat_map(|s| (1..=CAUSAL_T).map(move |p| (s, p)))
        .collect();
    let results = par::map(&cases, exec(), |&(seed, p)| {
        let cfg = EquivConfig::split_heads(Mode::SelfAttention, CAUSAL_T, 8, 2, seed);
        check_causality(&cfg, p)
    });
    let mut bad = Vec::new();
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(true) => {}
            Ok(false) => bad.push(*case),
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{} perturbations, {} moved an earlier output {:?}", cases.len(), bad.len(), bad),
    )
}

fn gradients() -> Outcome {
    let mut cfgs = Vec::new();
    for &t in &GRAD_SEQ_LENS {
        for &h in &GRAD_HEADS {
            for seed in 0..GRAD_SEEDS {
                cfgs.push(EquivConfig::split_heads(Mode::SelfAttention, t, GRAD_D_MODEL, h, seed));
            }
        }
    }
    let opts = FdOptions {
        eps: GRAD_EPS,
        threshold: GRAD_TOL,
        ..FdOptions::default()
    };
    let reports: Result<Vec<GradCheckReport>, Error> =
        par::map(&cfgs, exec(), |c| finite_diff_check(c, opts)).into_iter().collect();
    let reports = match reports {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let failed = reports.iter().filter(|r| !r.passed).count();
    let (i, w) = reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .expect("nonempty grid");
    Outcome::new(
        failed == 0,
        format!(
            "{} cells, {failed} failed, max_rel_err={:e} at {} (T={} H={} seed={})",
            reports.len(),
            w.max_rel_err,
            w.worst_parameter,
            cfgs[i].seq_len,
            cfgs[i].heads,
            cfgs[i].seed
        ),
    )
}

fn memory_contracts() -> Outcome {
    let (d_k, d_v) = (8, 5);
    let scale = ScaleVariant::Dk.factor(d_k, d_v);
    let mut rng = init::rng(7);
    let row = |n: usize, rng: &mut init::SeededRng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect() };
    let mut mem = WriteOnceMemory::new(d_k, d_v);
    if mem.append(&row(d_k, &mut rng), &row(d_v, &mut rng)).is_err() {
        return Outcome::new(false, "first append failed");
    }
    let snap_key = mem.key_row(0).to_vec();
    let snap_val = mem.value_row(0).to_vec();

    let mut reads = 0;
    let mut worst_sum: f64 = 0.0;
    let mut negative = 0;
    let mut hull_violations = 0;
    for i in 0..MEMORY_APPENDS {
        if let Err(e) = mem.append(&row(d_k, &mut rng), &row(d_v, &mut rng)) {
            return Outcome::error(e);
        }
        // Large queries push the softmax toward one-hot.
        let amp = if i % 3 == 0 { 100.0 } else { 1.0 };
        let q: Vec<f64> = row(d_k, &mut rng).iter().map(|v| v * amp).collect();
        let r = match mem.content_read(&q, scale) {
            Ok(r) => r,
            Err(e) => return Outcome::error(e),
        };
        reads += 1;
        let w = r.weights.as_slice();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        negative += w.iter().filter(|&&x| x.is_nan() || x < 0.0).count();
        for c in 0..d_v {
            let col = (0..mem.size()).map(|j| mem.value_row(j)[c]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            if r.readout[c] < lo - slack || r.readout[c] > hi + slack {
                hull_violations += 1;
            }
        }
    }
    let immutable = mem.key_row(0) == snap_key && mem.value_row(0) == snap_val;

    let mut sealed_ok = true;
    let mut sealed = WriteOnceMemory::new(2, 2);
    sealed_ok &= sealed.append(&[1.0, 0.0], &[0.0, 1.0]).is_ok();
    sealed.seal();
    sealed_ok &= matches!(sealed.append(&[1.0, 0.0], &[0.0, 1.0]), Err(Error::SealedMemory));
    sealed_ok &= sealed.size() == 1;

    let engine_sealed = (|| -> sdnc::Result<bool> {
        let mut rng = init::rng(11);
        let params = init::layer_params(&mut rng, 4, 2, 2, 2)?;
        let cross: CrossLayerParams = init::cross_params(&mut rng, 4, 4, 2, 2, 2)?;
        let enc = init::inputs(&mut rng, 3, 4);
        let mut engine = SdncEngine::new(params);
        engine.load_encoder_memory(cross, &enc)?;
        let rejected = (0..2).all(|h| matches!(engine.append_encoder(h, &[0.0; 2], &[0.0; 2]), Err(Error::SealedMemory)));
        let intact = (0..2).all(|h| engine.encoder_memory(h).is_some_and(|m| m.is_sealed() && m.size() == 3));
        Ok(rejected && intact)
    })();
    sealed_ok &= matches!(engine_sealed, Ok(true));

    Outcome::new(
        immutable && worst_sum <= SIMPLEX_TOL && negative == 0 && hull_violations == 0 && sealed_ok,
        format!(
            "row 0 unchanged after {MEMORY_APPENDS} appends: {immutable}; {reads} reads, max |sum-1|={worst_sum:e}, \
             negative weights={negative}, hull violations={hull_violations}; sealed rejects appends: {sealed_ok}"
        ),
    )
}

fn cli_output(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("sdnc").chain(args.iter().copied()), &mut out, &mut err);
    (code, out)
}

fn determinism() -> Outcome {
    let equiv = ["equiv", "--seq-len", "32", "--d-model", "16", "--heads", "2", "--seeds", "10", "--causality"];
    let a = cli_output(&equiv);
    let b = cli_output(&equiv);
    let mut par_args = equiv.to_vec();
    par_args.push("--parallel");
    let c = cli_output(&par_args);
    let cli_same = a.0 == 0 && a == b && a == c;

    let grad = ["gradcheck", "--seq-len", "6", "--seeds", "3"];
    let g1 = cli_output(&grad);
    let mut gp = grad.to_vec();
    gp.push("--parallel");
    let g2 = cli_output(&gp);
    let grad_same = g1.0 == 0 && g1 == g2;

    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::error(e),
    };
    let files: Vec<_> = ["a.bin", "b.bin"].iter().map(|n| dir.path().join(n)).collect();
    let mut codes = Vec::new();
    for f in &files {
        let p = f.to_string_lossy().into_owned();
        codes.push(cli_output(&["gen-weights", "--d-model", "16", "--heads", "4", "--seed", "5", "--out", &p]).0);
    }
    let bytes: Vec<_> = files.iter().map(|f| std::fs::read(f).unwrap_or_default()).collect();
    let files_same = codes == [0, 0] && !bytes[0].is_empty() && bytes[0] == bytes[1];

    let cfgs = grid(Mode::SelfAttention, &[1, 8, 32], &[4, 16], &[1, 2], 10);
    let grids_same = match (run_grid(&cfgs, Execution::Sequential), run_grid(&cfgs, Execution::Parallel)) {
        (Ok(s), Ok(p)) => s == p,
        _ => false,
    };

    Outcome::new(
        cli_same && grad_same && files_same && grids_same,
        format!(
            "equiv output repeatable: {cli_same}; gradcheck sequential = parallel: {grad_same}; \
             weight files identical: {files_same}; grid sequential = parallel: {grids_same} \
             (parallel backend {})",
            if Execution::parallel_available() { "rayon" } else { "disabled" }
        ),
    )
}

fn negative_controls() -> Outcome {
    let base = grid(Mode::SelfAttention, &SEQ_LENS, &D_MODELS, &HEADS, SEEDS);
    let mut lines = Vec::new();
    let mut ok = true;
    for fault in [Fault::NoCausalPrefix, Fault::StreamScaleDv, Fault::ReadBeforeAppend] {
        let cfgs: Vec<EquivConfig> = base
            .iter()
            .map(|c| {
                let mut c = EquivConfig { fault, ..*c };
                if fault == Fault::StreamScaleDv {
                    // The two scales coincide when d_v = d_k.
                    c.d_v = 2 * c.d_k;
                }
                c
            })
            .collect();
        let reports = match run_grid(&cfgs, exec()) {
            Ok(r) => r,
            Err(e) => return Outcome::error(e),
        };
        let failed = reports.iter().filter(|r| !r.passed).count();
        let max = worst(&reports).map_or(0.0, |w| w.max_abs_diff);
        let caught = failed > 0 && max >= NEGATIVE_MIN_DIFF;
        ok &= caught;
        lines.push(format!("{}: {failed}/{} cells fail, max_abs_diff={max:e}", fault.name(), reports.len()));
    }
    Outcome::new(ok, lines.join("; "))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("streamed engine equals batched causal attention", self_grid),
        ("restricted single-track mode equals batched attention", restricted_grid),
        ("cross-attention equals sealed encoder memory reads", cross_equivalence),
        ("outputs never depend on later tokens", causality),
        ("analytic gradients match central differences", gradients),
        ("write-once memory contracts", memory_contracts),
        ("deterministic output, files and parallel execution", determinism),
        ("negative controls are detected", negative_controls),
    ];
    println!("acceptance: tol={DEFAULT_TOL:e}, parallel backend available: {}", Execution::parallel_available());
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failures += 1;
        }
        println!(
            "{tag} [{}] {name} ({:.1}s): {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

