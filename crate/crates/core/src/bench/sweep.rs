//! Wall-clock sweeps over sequence length and log-log slope fits.

use std::path::Path;
use std::time::Instant;

use crate::attention::{attention_layer, AttentionConfig, LayerParams, Mechanism};
use crate::autodiff::Tape;
use crate::error::{DbaError, Result};
use crate::rng::{split_seed, Rng};
use crate::tensor::Tensor;

use super::flops::count_flops;
use super::memory::peak_bytes;

pub const CSV_HEADER: [&str; 11] = [
    "mechanism",
    "n",
    "d",
    "d_p",
    "d_in",
    "heads",
    "flops",
    "peak_bytes",
    "wall_ms_mean",
    "wall_ms_std",
    "reps",
];

pub const MIN_REPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub n: usize,
    pub d: usize,
    pub d_p: usize,
    pub d_in: usize,
    pub heads: usize,
    pub flops: u64,
    pub peak_bytes: u64,
    pub wall_ms_mean: f64,
    pub wall_ms_std: f64,
    pub reps: usize,
    /// Skipped because the n² map would exceed the memory budget.
    pub oom: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub warmups: usize,
    /// Configs whose analytic peak exceeds this are recorded as `oom`.
    pub memory_budget_bytes: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            warmups: 2,
            memory_budget_bytes: 4 << 30,
        }
    }
}

/// Median of per-group means: reps are split into consecutive groups of
/// at most `ceil(reps / 5)` and the median group mean is reported.
pub fn median_of_means(samples: &[f64]) -> f64 {
    let group = samples.len().div_ceil(5).max(1);
    let mut means: Vec<f64> = samples
        .chunks(group)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let m = means.len();
    if m % 2 == 1 {
        means[m / 2]
    } else {
        0.5 * (means[m / 2 - 1] + means[m / 2])
    }
}

fn std_dev(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
}

fn forward(x: &Tensor, params: &LayerParams, cfg: &AttentionConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let nodes = params.register(&mut tape, false);
    let out = attention_layer(&mut tape, xi, &nodes, cfg)?;
    Ok(tape.value(out).clone())
}

/// Times one config. Timed region is the single-threaded forward pass.
pub fn measure(cfg: &AttentionConfig, reps: usize, seed: u64, opts: &SweepOptions) -> Result<BenchRecord> {
    if reps < MIN_REPS {
        return Err(DbaError::Parameter(format!("need reps >= {MIN_REPS}, got {reps}")));
    }
    cfg.validate()?;
    let mut rec = BenchRecord {
        mechanism: cfg.mechanism,
        n: cfg.n,
        d: cfg.d,
        d_p: cfg.d_p,
        d_in: cfg.d_in,
        heads: cfg.heads,
        flops: count_flops(cfg),
        peak_bytes: peak_bytes(cfg),
        wall_ms_mean: f64::NAN,
        wall_ms_std: f64::NAN,
        reps,
        oom: false,
    };
    if rec.peak_bytes > opts.memory_budget_bytes {
        log::warn!("{} at n={} needs {} bytes, recording oom", cfg.mechanism, cfg.n, rec.peak_bytes);
        rec.oom = true;
        return Ok(rec);
    }
    let mut rng = Rng::new(split_seed(seed, cfg.n as u64));
    let params = LayerParams::init(cfg, &mut rng)?;
    let x = rng.gaussian(cfg.n, cfg.d, 1.0)?;
    for _ in 0..opts.warmups {
        std::hint::black_box(forward(&x, &params, cfg)?);
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(forward(&x, &params, cfg)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    rec.wall_ms_mean = median_of_means(&samples);
    rec.wall_ms_std = std_dev(&samples);
    Ok(rec)
}

/// Every mechanism at every length, in that nesting order. Configs run one
/// after another, never concurrently.
pub fn run_sweep(
    mechanisms: &[Mechanism],
    n_values: &[usize],
    template: &AttentionConfig,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    run_sweep_with(mechanisms, n_values, template, reps, seed, &SweepOptions::default())
}

pub fn run_sweep_with(
    mechanisms: &[Mechanism],
    n_values: &[usize],
    template: &AttentionConfig,
    reps: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(mechanisms.len() * n_values.len());
    for &mech in mechanisms {
        for &n in n_values {
            let cfg = AttentionConfig {
                n,
                mechanism: mech,
                ..*template
            };
            out.push(measure(&cfg, reps, seed, opts)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub mechanism: Mechanism,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_values: Vec<usize>,
}

/// Least-squares line through `(ln x, ln y)`: `(slope, intercept, r²)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

fn check_span(n_values: &[usize]) -> Result<()> {
    let lo = n_values.iter().copied().min().unwrap_or(0);
    let hi = n_values.iter().copied().max().unwrap_or(0);
    if n_values.len() < 4 || lo == 0 || hi < 8 * lo {
        return Err(DbaError::Parameter(format!(
            "need >= 4 lengths spanning >= 8x for a slope fit, got {n_values:?}"
        )));
    }
    Ok(())
}

/// One wall-clock fit per mechanism, in first-seen order. `oom` rows are skipped.
pub fn fit_scaling(records: &[BenchRecord]) -> Result<Vec<ScalingFit>> {
    let mut mechs: Vec<Mechanism> = Vec::new();
    for r in records {
        if !mechs.contains(&r.mechanism) {
            mechs.push(r.mechanism);
        }
    }
    mechs
        .into_iter()
        .map(|m| {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.mechanism == m && !r.oom).collect();
            let n_values: Vec<usize> = rows.iter().map(|r| r.n).collect();
            check_span(&n_values)?;
            let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.wall_ms_mean).collect();
            let (slope, intercept, r2) = fit_loglog(&xs, &ys);
            Ok(ScalingFit {
                mechanism: m,
                slope,
                intercept,
                r2,
                n_values,
            })
        })
        .collect()
}

/// `(n, wall(base) / wall(other))` for lengths where both ran.
pub fn speedups(records: &[BenchRecord], base: Mechanism, other: Mechanism) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.mechanism == base && !r.oom)
        .filter_map(|b| {
            records
                .iter()
                .find(|o| o.mechanism == other && o.n == b.n && !o.oom)
                .map(|o| (b.n, b.wall_ms_mean / o.wall_ms_mean))
        })
        .collect()
}

/// Problems that make a sweep untrustworthy; empty when sane.
pub fn sanity_violations(records: &[BenchRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| !r.oom) {
        if r.flops == 0 || !(r.wall_ms_std >= 0.0) || !(r.wall_ms_mean > 0.0) {
            out.push(format!("{} n={}: bad measurement {r:?}", r.mechanism, r.n));
        }
    }
    for r in records.iter().filter(|r| !r.oom) {
        let doubled = records
            .iter()
            .find(|o| o.mechanism == r.mechanism && o.n == 2 * r.n && !o.oom);
        if let Some(o) = doubled {
            if o.wall_ms_mean <= r.wall_ms_mean {
                out.push(format!(
                    "{}: time at n={} ({:.3} ms) not above n={} ({:.3} ms)",
                    r.mechanism, o.n, o.wall_ms_mean, r.n, r.wall_ms_mean
                ));
            }
        }
    }
    let s = speedups(records, Mechanism::Vanilla, Mechanism::DBA);
    for w in s.windows(2) {
        if w[1].1 < w[0].1 {
            out.push(format!(
                "speedup fell from {:.2}x at n={} to {:.2}x at n={}",
                w[0].1, w[0].0, w[1].1, w[1].0
            ));
        }
    }
    out
}

fn wall_field(r: &BenchRecord, v: f64) -> String {
    if r.oom {
        "oom".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.mechanism.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.d_p.to_string(),
            r.d_in.to_string(),
            r.heads.to_string(),
            r.flops.to_string(),
            r.peak_bytes.to_string(),
            wall_field(r, r.wall_ms_mean),
            wall_field(r, r.wall_ms_std),
            r.reps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DbaError {
    DbaError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> AttentionConfig {
        AttentionConfig::new(64, 16, 4, 8, 1, Mechanism::DBA).unwrap()
    }

    #[test]
    fn median_of_means_basic() {
        assert_eq!(median_of_means(&[1.0, 2.0, 3.0, 4.0, 100.0]), 3.0);
        assert_eq!(median_of_means(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 9.0, 9.0]), 3.0);
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let (s, b, r2) = fit_loglog(&xs, &ys);
        assert!((s - 1.5).abs() < 1e-12 && (b - 3f64.ln()).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_fields_reproducible() {
        let mechs = [Mechanism::Vanilla, Mechanism::DBA];
        let a = run_sweep(&mechs, &[32, 64], &template(), 5, 1).unwrap();
        let b = run_sweep(&mechs, &[32, 64], &template(), 5, 1).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.flops, x.peak_bytes), (y.flops, y.peak_bytes));
            assert!(x.wall_ms_std >= 0.0);
        }
    }

    #[test]
    fn short_sweeps_cannot_be_fit() {
        let recs = run_sweep(&[Mechanism::DBA], &[16, 32, 64], &template().with_n(16), 5, 0).unwrap();
        assert!(fit_scaling(&recs).is_err());
        assert!(run_sweep(&[Mechanism::DBA], &[64], &template(), 3, 0).is_err());
    }

    #[test]
    fn over_budget_is_oom_row() {
        let opts = SweepOptions {
            warmups: 0,
            memory_budget_bytes: 1000,
        };
        let recs = run_sweep_with(&[Mechanism::Vanilla], &[64], &template(), 5, 0, &opts).unwrap();
        assert!(recs[0].oom);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert!(lines.next().unwrap().contains(",oom,oom,"));
    }
}
