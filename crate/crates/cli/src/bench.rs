//! Training-time scaling over the worker count.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use scalegp::admm::{partition, train, AdmmConfig};
use scalegp::gp::{default_init, estimate_noise, fit_local, nll_with, GpOptions, Shard};
use scalegp::Result;

use crate::config::{NoisePolicy, RunConfig};
use crate::pipeline::load_dataset;

/// Allowed relative slack when checking that time does not grow with `K`.
pub const NOISE_BAND: f64 = 0.10;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub workers: usize,
    /// Median over repeats of the slowest worker's cold local fit from the
    /// shared starting point.
    pub per_execution_seconds: f64,
    /// Median critical path of the whole ADMM run.
    pub admm_seconds: f64,
    pub admm_wall_seconds: f64,
    pub rounds: usize,
    pub status: String,
    /// Full-data NLL at the consensus hyperparameters.
    pub consensus_nll: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub points: usize,
    pub repeats: usize,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
    /// Single NLL evaluation on the full series.
    pub toeplitz_eval_seconds: f64,
    pub dense_eval_seconds: Option<f64>,
    /// Per-execution time never grows by more than the noise band as `K` rises.
    pub monotone: bool,
    pub toeplitz_faster: Option<bool>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each shard's unpenalized fit one after the other and returns the
/// slowest, so the figure does not depend on how many cores are free.
pub fn per_execution_time(shards: &[Shard], cfg: &RunConfig, init: &scalegp::kernel::HyperParams) -> Result<Duration> {
    let mut worst = Duration::ZERO;
    for s in shards {
        let start = Instant::now();
        fit_local(s, init, &cfg.kernel, None, &cfg.gp)?;
        worst = worst.max(start.elapsed());
    }
    Ok(worst)
}

/// True when every step up in `K` keeps time within `band` of the previous one.
pub fn is_monotone(times: &[f64], band: f64) -> bool {
    times.windows(2).all(|w| w[1] <= w[0] * (1.0 + band))
}

fn time_eval(shard: &Shard, cfg: &RunConfig, init: &scalegp::kernel::HyperParams, toeplitz: bool, repeats: usize) -> Result<f64> {
    let opts = GpOptions { toeplitz, ..cfg.gp };
    let mut samples = vec![];
    for _ in 0..repeats {
        let start = Instant::now();
        nll_with(shard, init, &cfg.kernel, &opts)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(median(samples))
}

pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    let data = load_dataset(cfg)?;
    let n = cfg.bench.points.min(data.len());
    let times = &data.times()[..n];
    let raw = &data.values[..n];
    let level = raw.iter().sum::<f64>() / n as f64;
    let values: Vec<f64> = raw.iter().map(|v| v - level).collect();
    let noise = match cfg.noise {
        NoisePolicy::Estimate => estimate_noise(&values),
        NoisePolicy::Fixed(v) => v,
    };
    let init = default_init(&values, noise);
    let repeats = cfg.bench.repeats.max(1);

    let mut rows = vec![];
    for &k in &cfg.bench.workers {
        let admm_cfg = AdmmConfig { workers: k, ..cfg.admm };
        let shards = partition(times, &values, &admm_cfg)?;
        let mut per_exec = vec![];
        let mut admm = vec![];
        let mut wall = vec![];
        let mut last = None;
        for _ in 0..repeats {
            per_exec.push(per_execution_time(&shards, cfg, &init)?.as_secs_f64());
            let start = Instant::now();
            let out = train(times, &values, &admm_cfg, &cfg.kernel, &init, &cfg.gp)?;
            wall.push(start.elapsed().as_secs_f64());
            admm.push(out.critical_path().as_secs_f64());
            last = Some(out);
        }
        let out = last.expect("at least one repeat");
        let full = Shard::new(times.to_vec(), values.clone())?;
        rows.push(BenchRow {
            workers: k,
            per_execution_seconds: median(per_exec),
            admm_seconds: median(admm),
            admm_wall_seconds: median(wall),
            rounds: out.state.round,
            status: format!("{:?}", out.status),
            consensus_nll: nll_with(&full, &out.hp, &cfg.kernel, &cfg.gp).unwrap_or(f64::NAN),
        });
    }

    let full = Shard::new(times.to_vec(), values.clone())?;
    let toeplitz_eval_seconds = time_eval(&full, cfg, &init, true, repeats)?;
    let dense_eval_seconds = if cfg.bench.dense {
        Some(time_eval(&full, cfg, &init, false, repeats)?)
    } else {
        None
    };
    let per: Vec<f64> = rows.iter().map(|r| r.per_execution_seconds).collect();
    Ok(BenchReport {
        points: n,
        repeats,
        threads: rayon::current_num_threads(),
        monotone: is_monotone(&per, NOISE_BAND),
        toeplitz_faster: dense_eval_seconds.map(|d| toeplitz_eval_seconds < d),
        rows,
        toeplitz_eval_seconds,
        dense_eval_seconds,
    })
}

pub fn bench_table(r: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "points {} | repeats {} | threads {}", r.points, r.repeats, r.threads);
    let _ = writeln!(
        s,
        "{:>3} {:>14} {:>12} {:>12} {:>7} {:>10} {:>14}",
        "K", "per-exec (s)", "admm (s)", "wall (s)", "rounds", "status", "consensus nll"
    );
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:>3} {:>14.4} {:>12.4} {:>12.4} {:>7} {:>10} {:>14.3}",
            row.workers,
            row.per_execution_seconds,
            row.admm_seconds,
            row.admm_wall_seconds,
            row.rounds,
            row.status,
            row.consensus_nll
        );
    }
    let _ = writeln!(s, "monotone within {:.0}%: {}", NOISE_BAND * 100.0, r.monotone);
    let _ = write!(s, "nll evaluation: toeplitz {:.5} s", r.toeplitz_eval_seconds);
    if let Some(d) = r.dense_eval_seconds {
        let _ = write!(s, ", dense {d:.5} s");
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_band() {
        assert!(is_monotone(&[1.0, 0.5, 0.54], 0.1));
        assert!(!is_monotone(&[1.0, 0.5, 0.56], 0.1));
        assert!(is_monotone(&[], 0.1));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
