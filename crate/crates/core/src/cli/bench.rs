//! Wall-clock comparison of the batched and streamed paths.
//!
//! Every timing is the minimum over `repeat` runs.

use std::time::{Duration, Instant};

use crate::attention::causal_self_attention;
use crate::controller::project;
use crate::equivalence::{self_instance, EquivConfig, Mode};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::memory::{ScaleVariant, WriteOnceMemory};
use crate::sdnc::SdncEngine;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
    pub seed: u64,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub batched: Duration,
    pub streamed: Duration,
    /// `(position t, latency of step t)`, 1-based positions.
    pub step_latency: Vec<(usize, Duration)>,
    /// `(T', total content-read time for T' streamed tokens)`.
    pub read_cost: Vec<(usize, Duration)>,
    /// Log-log slope of `read_cost` against `T'`.
    pub fit_exponent: Option<f64>,
}

fn min_of<F: FnMut() -> Result<Duration>>(repeat: usize, mut f: F) -> Result<Duration> {
    let mut best = Duration::MAX;
    for _ in 0..repeat {
        best = best.min(f()?);
    }
    Ok(best)
}

/// Total time spent in content reads while streaming the first `n` rows.
/// Projection and appends are excluded.
pub fn streamed_read_cost(cfg: &EquivConfig, x: &DenseMatrix, n: usize) -> Result<Duration> {
    let (params, _) = self_instance(cfg)?;
    let scale = ScaleVariant::Dk.factor(params.d_k(), params.d_v());
    let mut mems: Vec<_> = (0..params.heads())
        .map(|_| WriteOnceMemory::new(params.d_k(), params.d_v()))
        .collect();
    let mut total = Duration::ZERO;
    for t in 0..n {
        for (h, mem) in mems.iter_mut().enumerate() {
            let tok = project(x.row(t), &params, h)?;
            mem.append(&tok.k, &tok.v)?;
            let start = Instant::now();
            let r = mem.content_read(&tok.q, scale)?;
            total += start.elapsed();
            std::hint::black_box(r);
        }
    }
    Ok(total)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.repeat == 0 {
        return Err(Error::Config("--repeat must be at least 1".into()));
    }
    let eq = EquivConfig {
        seq_len: cfg.seq_len,
        d_model: cfg.d_model,
        d_k: cfg.d_k,
        d_v: cfg.d_v,
        heads: cfg.heads,
        seed: cfg.seed,
        mode: Mode::SelfAttention,
        ..EquivConfig::default()
    };
    let (params, x) = self_instance(&eq)?;
    let n = cfg.seq_len;

    let batched = min_of(cfg.repeat, || {
        let start = Instant::now();
        std::hint::black_box(causal_self_attention(&x, &params)?);
        Ok(start.elapsed())
    })?;

    let mut probes: Vec<usize> = [1, n / 4, n / 2, 3 * n / 4, n]
        .into_iter()
        .filter(|&t| t >= 1)
        .collect();
    probes.dedup();
    let mut step_best = vec![Duration::MAX; probes.len()];
    let streamed = min_of(cfg.repeat, || {
        let mut engine = SdncEngine::new(params.clone());
        let mut total = Duration::ZERO;
        for t in 0..n {
            let start = Instant::now();
            std::hint::black_box(engine.step(x.row(t))?);
            let took = start.elapsed();
            total += took;
            if let Some(i) = probes.iter().position(|&p| p == t + 1) {
                step_best[i] = step_best[i].min(took);
            }
        }
        Ok(total)
    })?;

    let mut sizes: Vec<usize> = [n / 4, n / 2, n].into_iter().filter(|&s| s >= 1).collect();
    sizes.dedup();
    let read_cost = sizes
        .iter()
        .map(|&s| Ok((s, min_of(cfg.repeat, || streamed_read_cost(&eq, &x, s))?)))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = read_cost
        .iter()
        .map(|&(s, d)| (s as f64, d.as_secs_f64()))
        .collect();

    Ok(BenchResult {
        batched,
        streamed,
        step_latency: probes.into_iter().zip(step_best).collect(),
        read_cost,
        fit_exponent: loglog_slope(&pts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0].iter().map(|&x: &f64| (x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&pts[..1]), None);
        assert_eq!(loglog_slope(&[(1.0, 0.0), (2.0, 1.0)]), None);
    }

    #[test]
    fn zero_repeat_rejected() {
        let cfg = BenchConfig {
            seq_len: 4,
            d_model: 4,
            d_k: 4,
            d_v: 4,
            heads: 1,
            seed: 0,
            repeat: 0,
        };
        assert!(matches!(run_bench(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_bench_runs() {
        let cfg = BenchConfig {
            seq_len: 1,
            d_model: 4,
            d_k: 4,
            d_v: 4,
            heads: 1,
            seed: 0,
            repeat: 2,
        };
        let r = run_bench(&cfg).unwrap();
        assert_eq!(r.step_latency.len(), 1);
        assert_eq!(r.read_cost.len(), 1);
        assert_eq!(r.fit_exponent, None);
    }
}
