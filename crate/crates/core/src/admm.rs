//! Consensus ADMM over data shards.
//!
//! Every round each worker minimizes its local objective plus the proximal
//! terms `ζ_iᵀ(θ_i − z) + (ρ/2)‖θ_i − z‖²`; the coordinator then sets
//! `z ← mean(θ_i + ζ_i/ρ)` and `ζ_i ← ζ_i + ρ(θ_i − z)`. All vectors live in
//! log-hyperparameter space.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_local, FitResult, GpOptions, Proximal, Shard};
use crate::kernel::{HyperParams, KernelSpec};
use crate::optim::OptimStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    /// Consecutive blocks; keeps each shard on a regular grid.
    Contiguous,
    /// Worker `i` takes every `K`-th point starting at `i`.
    Strided,
    /// Seeded random assignment.
    Random,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(Partition::Contiguous),
            "strided" => Ok(Partition::Strided),
            "random" => Ok(Partition::Random),
            other => Err(Error::InvalidConfig(format!("unknown partition `{other}`"))),
        }
    }
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Contiguous => "contiguous",
            Partition::Strided => "strided",
            Partition::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub workers: usize,
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_rounds: usize,
    pub partition: Partition,
    pub seed: u64,
    /// Start every worker from its own unpenalized local fit instead of the
    /// shared initial guess.
    pub warm_start: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            rho: 1.0,
            eps_abs: 1e-4,
            eps_rel: 1e-3,
            max_rounds: 50,
            partition: Partition::Contiguous,
            seed: 0,
            warm_start: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig("admm.workers must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig("admm.rho must be positive".into()));
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::InvalidConfig("ADMM tolerances must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("admm.max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits a series into `K` disjoint shards whose sizes differ by at most one.
pub fn partition(times: &[f64], values: &[f64], cfg: &AdmmConfig) -> Result<Vec<Shard>> {
    let n = times.len();
    let k = cfg.workers;
    if values.len() != n {
        return Err(Error::DimensionMismatch("times and values differ in length".into()));
    }
    if k == 0 || n < 2 * k {
        return Err(Error::TooFewPoints { points: n, workers: k });
    }
    let sizes: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
    let groups: Vec<Vec<usize>> = match cfg.partition {
        Partition::Contiguous => {
            let mut start = 0;
            sizes
                .iter()
                .map(|&s| {
                    let g = (start..start + s).collect();
                    start += s;
                    g
                })
                .collect()
        }
        Partition::Strided => (0..k).map(|i| (i..n).step_by(k).collect()).collect(),
        Partition::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let mut start = 0;
            sizes
                .iter()
                .map(|&s| {
                    let mut g = idx[start..start + s].to_vec();
                    g.sort_unstable();
                    start += s;
                    g
                })
                .collect()
        }
    };
    groups
        .into_iter()
        .map(|g| Shard::new(g.iter().map(|&i| times[i]).collect(), g.iter().map(|&i| values[i]).collect()))
        .collect()
}

/// Outcome of one worker's proximal minimization.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub theta: Vec<f64>,
    /// Local objective `l_i(θ_i)` without the proximal terms.
    pub local_objective: f64,
    pub iterations: usize,
    pub status: OptimStatus,
}

/// The per-worker subproblem solved inside each round.
pub trait LocalProblem: Sync {
    fn workers(&self) -> usize;
    fn dim(&self) -> usize;
    fn solve(&self, worker: usize, start: &[f64], prox: &Proximal) -> LocalSolution;
}

/// Residuals and bookkeeping of one completed round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub primal: Vec<f64>,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub local_objective: Vec<f64>,
    pub iterations: Vec<usize>,
    pub statuses: Vec<OptimStatus>,
    pub worker_time: Vec<Duration>,
    pub coordinator_time: Duration,
}

impl RoundRecord {
    pub fn max_primal(&self) -> f64 {
        self.primal.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Wall time of the round if all workers ran in parallel.
    pub fn critical_path(&self) -> Duration {
        self.worker_time.iter().copied().max().unwrap_or_default() + self.coordinator_time
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCounters {
    pub rounds: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmState {
    pub round: usize,
    pub rho: f64,
    pub theta: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    pub history: Vec<RoundRecord>,
    pub comm: CommCounters,
    /// Critical-path time spent producing the initial `θ_i⁰`.
    pub setup_time: Duration,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `z = (1/K)·Σ(θ_i + ζ_i/ρ)`.
pub fn consensus(theta: &[Vec<f64>], zeta: &[Vec<f64>], rho: f64) -> Vec<f64> {
    let k = theta.len() as f64;
    let dim = theta[0].len();
    (0..dim)
        .map(|j| theta.iter().zip(zeta).map(|(t, u)| t[j] + u[j] / rho).sum::<f64>() / k)
        .collect()
}

/// `(ε_pri, ε_dual)` for the given iterate.
pub fn tolerances(theta: &[Vec<f64>], z: &[f64], zeta: &[Vec<f64>], rho: f64, cfg: &AdmmConfig) -> (f64, f64) {
    let p = z.len() as f64;
    let base = p.sqrt() * cfg.eps_abs;
    let znorm = norm(z);
    let scale = theta.iter().map(|t| norm(t)).fold(znorm, f64::max);
    // ζ here is every worker's dual stacked into one vector
    let dual_scale = rho * zeta.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    (base + cfg.eps_rel * scale, base + cfg.eps_rel * dual_scale)
}

impl AdmmState {
    /// Initial state with `z⁰ = mean(θ_i⁰ + ζ_i⁰/ρ)`.
    pub fn new(theta: Vec<Vec<f64>>, zeta: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        if theta.is_empty() || theta.len() != zeta.len() {
            return Err(Error::DimensionMismatch("need one θ and one ζ per worker".into()));
        }
        let dim = theta[0].len();
        if theta.iter().chain(&zeta).any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch("all θ_i and ζ_i must share one dimension".into()));
        }
        let z = consensus(&theta, &zeta, rho);
        Ok(Self {
            round: 0,
            rho,
            theta,
            z,
            zeta,
            history: vec![],
            comm: CommCounters::default(),
            setup_time: Duration::ZERO,
        })
    }

    pub fn workers(&self) -> usize {
        self.theta.len()
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.history.last()
    }

    /// Setup plus, for every round, the slowest worker and the coordinator.
    pub fn critical_path(&self) -> Duration {
        self.setup_time + self.history.iter().map(RoundRecord::critical_path).sum::<Duration>()
    }

    /// Columnar trace: one line per round.
    pub fn trace_table(&self) -> String {
        let k = self.workers();
        let mut out = String::from("round");
        for i in 0..k {
            let _ = write!(out, "\tprimal_{i}");
        }
        out.push_str("\tdual\teps_pri\teps_dual");
        for i in 0..k {
            let _ = write!(out, "\tnll_{i}");
        }
        out.push('\n');
        for r in &self.history {
            let _ = write!(out, "{}", r.round);
            for v in &r.primal {
                let _ = write!(out, "\t{v:.6e}");
            }
            let _ = write!(out, "\t{:.6e}\t{:.6e}\t{:.6e}", r.dual, r.eps_pri, r.eps_dual);
            for v in &r.local_objective {
                let _ = write!(out, "\t{v:.6e}");
            }
            out.push('\n');
        }
        out
    }
}

/// One full round: all local solves, then the consensus and dual updates.
pub fn run_round<P: LocalProblem + ?Sized>(state: AdmmState, problem: &P, cfg: &AdmmConfig) -> AdmmState {
    let rho = state.rho;
    let k = state.workers();
    let solutions: Vec<(LocalSolution, Duration)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let prox = Proximal {
                z: state.z.clone(),
                zeta: state.zeta[i].clone(),
                rho,
            };
            let start = Instant::now();
            let sol = problem.solve(i, &state.theta[i], &prox);
            (sol, start.elapsed())
        })
        .collect();

    let coord_start = Instant::now();
    for (i, (sol, _)) in solutions.iter().enumerate() {
        if sol.status == OptimStatus::Failed {
            warn!("worker {i} failed in round {}; keeping its best iterate", state.round + 1);
        }
    }
    let theta: Vec<Vec<f64>> = solutions.iter().map(|(s, _)| s.theta.clone()).collect();
    let z = consensus(&theta, &state.zeta, rho);
    let zeta: Vec<Vec<f64>> = state
        .zeta
        .iter()
        .zip(&theta)
        .map(|(u, t)| u.iter().zip(t).zip(&z).map(|((u, t), z)| u + rho * (t - z)).collect())
        .collect();
    let primal: Vec<f64> = theta
        .iter()
        .map(|t| norm(&t.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let dual = dual_residual(&state.z, &z, rho);
    let (eps_pri, eps_dual) = tolerances(&theta, &z, &zeta, rho, cfg);
    let coordinator_time = coord_start.elapsed();

    let dim = z.len();
    let mut history = state.history;
    history.push(RoundRecord {
        round: state.round + 1,
        primal,
        dual,
        eps_pri,
        eps_dual,
        local_objective: solutions.iter().map(|(s, _)| s.local_objective).collect(),
        iterations: solutions.iter().map(|(s, _)| s.iterations).collect(),
        statuses: solutions.iter().map(|(s, _)| s.status).collect(),
        worker_time: solutions.iter().map(|(_, t)| *t).collect(),
        coordinator_time,
    });
    AdmmState {
        round: state.round + 1,
        rho,
        theta,
        z,
        zeta,
        history,
        comm: CommCounters {
            rounds: state.comm.rounds + 1,
            scalars: state.comm.scalars + 2 * dim + 1,
        },
        setup_time: state.setup_time,
    }
}

/// `‖ρ(z_new − z_old)‖`.
pub fn dual_residual(z_old: &[f64], z_new: &[f64], rho: f64) -> f64 {
    norm(&z_new.iter().zip(z_old).map(|(a, b)| rho * (a - b)).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopStatus {
    Continue,
    Converged,
    Capped,
}

pub fn check_stop(state: &AdmmState, cfg: &AdmmConfig) -> StopStatus {
    let Some(last) = state.last() else {
        return StopStatus::Continue;
    };
    let (eps_pri, eps_dual) = tolerances(&state.theta, &state.z, &state.zeta, state.rho, cfg);
    if last.max_primal() <= eps_pri && last.dual <= eps_dual {
        StopStatus::Converged
    } else if state.round >= cfg.max_rounds {
        StopStatus::Capped
    } else {
        StopStatus::Continue
    }
}

/// Runs rounds from `state` until converged or capped.
pub fn iterate<P: LocalProblem + ?Sized>(mut state: AdmmState, problem: &P, cfg: &AdmmConfig) -> (AdmmState, StopStatus) {
    loop {
        state = run_round(state, problem, cfg);
        let status = check_stop(&state, cfg);
        if status != StopStatus::Continue {
            return (state, status);
        }
    }
}

/// GP shards as ADMM workers; the optimization vector holds the log values of
/// `spec.free_params()`.
pub struct GpShards<'a> {
    pub shards: &'a [Shard],
    pub base: HyperParams,
    pub spec: &'a KernelSpec,
    pub opts: &'a GpOptions,
}

impl LocalProblem for GpShards<'_> {
    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn dim(&self) -> usize {
        self.spec.free_params().len()
    }

    fn solve(&self, worker: usize, start: &[f64], prox: &Proximal) -> LocalSolution {
        let free = self.spec.free_params();
        let init = self.base.with_log_subset(&free, start);
        match fit_local(&self.shards[worker], &init, self.spec, Some(prox), self.opts) {
            Ok(r) => LocalSolution {
                theta: r.hp.log_subset(&free),
                local_objective: r.nll,
                iterations: r.iterations,
                status: r.status,
            },
            Err(e) => {
                warn!("worker {worker}: {e}");
                LocalSolution {
                    theta: start.to_vec(),
                    local_objective: f64::NAN,
                    iterations: 0,
                    status: OptimStatus::Failed,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Consensus hyperparameters `z` (noise variance carried over from `init`).
    pub hp: HyperParams,
    pub status: StopStatus,
    pub state: AdmmState,
    pub shards: Vec<Shard>,
    /// Set only for the single-worker shortcut.
    pub single_fit: Option<FitResult>,
}

impl TrainOutcome {
    pub fn critical_path(&self) -> Duration {
        self.state.critical_path()
    }
}

/// Partitions the series and runs consensus ADMM from `init`. With a single
/// worker there is nothing to agree on, so the shard is fitted directly and
/// recorded as one round.
pub fn train(
    times: &[f64],
    values: &[f64],
    cfg: &AdmmConfig,
    spec: &KernelSpec,
    init: &HyperParams,
    opts: &GpOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    init.validate()?;
    let shards = partition(times, values, cfg)?;
    let free = spec.free_params();
    let theta0 = init.log_subset(&free);
    let k = shards.len();
    let zeta0 = vec![vec![0.0; free.len()]; k];

    if k == 1 {
        let start = Instant::now();
        let fit = fit_local(&shards[0], init, spec, None, opts)?;
        let elapsed = start.elapsed();
        let theta = fit.hp.log_subset(&free);
        let (eps_pri, eps_dual) = tolerances(std::slice::from_ref(&theta), &theta, &zeta0, cfg.rho, cfg);
        let record = RoundRecord {
            round: 1,
            primal: vec![0.0],
            dual: dual_residual(&theta0, &theta, cfg.rho),
            eps_pri,
            eps_dual,
            local_objective: vec![fit.nll],
            iterations: vec![fit.iterations],
            statuses: vec![fit.status],
            worker_time: vec![elapsed],
            coordinator_time: Duration::ZERO,
        };
        let state = AdmmState {
            round: 1,
            rho: cfg.rho,
            theta: vec![theta.clone()],
            z: theta,
            zeta: zeta0,
            history: vec![record],
            comm: CommCounters {
                rounds: 1,
                scalars: 2 * free.len() + 1,
            },
            setup_time: Duration::ZERO,
        };
        return Ok(TrainOutcome {
            hp: fit.hp,
            status: StopStatus::Converged,
            state,
            shards,
            single_fit: Some(fit),
        });
    }

    let problem = GpShards {
        shards: &shards,
        base: *init,
        spec,
        opts,
    };
    let state = if cfg.warm_start {
        let fits: Vec<(Vec<f64>, Duration)> = (0..k)
            .into_par_iter()
            .map(|i| {
                let start = Instant::now();
                let theta = match fit_local(&shards[i], init, spec, None, opts) {
                    Ok(f) if !f.failed() => f.hp.log_subset(&free),
                    _ => theta0.clone(),
                };
                (theta, start.elapsed())
            })
            .collect();
        let setup_time = fits.iter().map(|f| f.1).max().unwrap_or_default();
        let mut state = AdmmState::new(fits.into_iter().map(|f| f.0).collect(), zeta0, cfg.rho)?;
        state.setup_time = setup_time;
        state
    } else {
        AdmmState::new(vec![theta0.clone(); k], zeta0, cfg.rho)?
    };
    let (state, status) = iterate(state, &problem, cfg);
    if status == StopStatus::Capped {
        info!("ADMM stopped at the round cap ({}) before meeting both residual tests", cfg.max_rounds);
    }
    let hp = init.with_log_subset(&free, &state.z);
    Ok(TrainOutcome {
        hp,
        status,
        state,
        shards,
        single_fit: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f_i(θ) = ½ Σ_j h_ij (θ_j − a_ij)²`, solved exactly.
    struct Quadratic {
        h: Vec<Vec<f64>>,
        a: Vec<Vec<f64>>,
    }

    impl LocalProblem for Quadratic {
        fn workers(&self) -> usize {
            self.a.len()
        }
        fn dim(&self) -> usize {
            self.a[0].len()
        }
        fn solve(&self, i: usize, _start: &[f64], prox: &Proximal) -> LocalSolution {
            let theta: Vec<f64> = (0..self.dim())
                .map(|j| (self.h[i][j] * self.a[i][j] - prox.zeta[j] + prox.rho * prox.z[j]) / (self.h[i][j] + prox.rho))
                .collect();
            let local = (0..self.dim()).map(|j| 0.5 * self.h[i][j] * (theta[j] - self.a[i][j]).powi(2)).sum();
            LocalSolution {
                theta,
                local_objective: local,
                iterations: 1,
                status: OptimStatus::Converged,
            }
        }
    }

    #[test]
    fn contiguous_partition() {
        let t: Vec<f64> = (0..6).map(f64::from).collect();
        let cfg = AdmmConfig { workers: 3, ..Default::default() };
        let shards = partition(&t, &t, &cfg).unwrap();
        let got: Vec<Vec<f64>> = shards.iter().map(|s| s.times().to_vec()).collect();
        assert_eq!(got, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert!(shards.iter().all(Shard::regular_grid));
    }

    #[test]
    fn single_worker_partition_is_identity() {
        let t: Vec<f64> = (0..9).map(f64::from).collect();
        let cfg = AdmmConfig { workers: 1, ..Default::default() };
        let shards = partition(&t, &t, &cfg).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].times(), &t[..]);
    }

    #[test]
    fn paper_sized_partition() {
        let t: Vec<f64> = (0..700).map(f64::from).collect();
        for partition in [Partition::Contiguous, Partition::Strided, Partition::Random] {
            let cfg = AdmmConfig { workers: 4, partition, seed: 7, ..Default::default() };
            let shards = partition_sizes(&t, &cfg);
            assert_eq!(shards, vec![175; 4]);
        }
    }

    fn partition_sizes(t: &[f64], cfg: &AdmmConfig) -> Vec<usize> {
        partition(t, t, cfg).unwrap().iter().map(Shard::len).collect()
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let t: Vec<f64> = (0..23).map(f64::from).collect();
        for scheme in [Partition::Contiguous, Partition::Strided, Partition::Random] {
            let cfg = AdmmConfig { workers: 4, partition: scheme, seed: 3, ..Default::default() };
            let shards = partition(&t, &t, &cfg).unwrap();
            let mut all: Vec<f64> = shards.iter().flat_map(|s| s.times().to_vec()).collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(all, t);
            let sizes: Vec<usize> = shards.iter().map(Shard::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn too_few_points() {
        let t = [0.0, 1.0, 2.0];
        let cfg = AdmmConfig { workers: 2, ..Default::default() };
        assert!(matches!(partition(&t, &t, &cfg), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn tolerance_arithmetic() {
        let cfg = AdmmConfig { eps_abs: 1e-4, eps_rel: 1e-3, ..Default::default() };
        let mut theta = vec![0.0; 7];
        theta[0] = 1.0;
        let mut z = vec![0.0; 7];
        z[1] = 2.0;
        let (pri, _) = tolerances(&[theta], &z, &[vec![0.0; 7]], 1.0, &cfg);
        assert!((pri - (7f64.sqrt() * 1e-4 + 2e-3)).abs() < 1e-15);
    }

    #[test]
    fn stop_rules() {
        let cfg = AdmmConfig::default();
        let problem = Quadratic { h: vec![vec![1.0; 2]; 2], a: vec![vec![1.0, 2.0]; 2] };
        let state = AdmmState::new(vec![vec![1.0, 2.0]; 2], vec![vec![0.0; 2]; 2], 1.0).unwrap();
        assert_eq!(check_stop(&state, &cfg), StopStatus::Continue);
        // already at the common optimum: zero residuals
        let state = run_round(state, &problem, &cfg);
        assert_eq!(state.last().unwrap().max_primal(), 0.0);
        assert_eq!(state.last().unwrap().dual, 0.0);
        assert_eq!(check_stop(&state, &cfg), StopStatus::Converged);

        let problem = Quadratic { h: vec![vec![100.0; 2]; 2], a: vec![vec![0.0, 0.0], vec![5.0, 5.0]] };
        let state = AdmmState::new(vec![vec![0.0; 2]; 2], vec![vec![0.0; 2]; 2], 1.0).unwrap();
        let state = run_round(state, &problem, &cfg);
        assert_eq!(check_stop(&state, &cfg), StopStatus::Continue);
        let capped = AdmmConfig { max_rounds: 1, ..cfg };
        assert_eq!(check_stop(&state, &capped), StopStatus::Capped);
    }

    #[test]
    fn coordinator_algebra_is_exact() {
        let cfg = AdmmConfig::default();
        let problem = Quadratic {
            h: vec![vec![1.0, 3.0], vec![2.0, 0.5], vec![4.0, 1.0]],
            a: vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 0.5]],
        };
        let mut state = AdmmState::new(vec![vec![0.0; 2]; 3], vec![vec![0.0; 2]; 3], 0.7).unwrap();
        for _ in 0..5 {
            let prev = state.clone();
            state = run_round(state, &problem, &cfg);
            let z = consensus(&state.theta, &prev.zeta, 0.7);
            assert_eq!(z, state.z);
            for i in 0..3 {
                for j in 0..2 {
                    assert_eq!(state.zeta[i][j], prev.zeta[i][j] + 0.7 * (state.theta[i][j] - state.z[j]));
                }
            }
            assert_eq!(state.last().unwrap().dual, dual_residual(&prev.z, &state.z, 0.7));
        }
        assert_eq!(state.comm, CommCounters { rounds: 5, scalars: 5 * (2 * 2 + 1) });
    }

    #[test]
    fn single_worker_has_zero_primal_residual() {
        let cfg = AdmmConfig { workers: 1, ..Default::default() };
        let problem = Quadratic { h: vec![vec![2.0, 1.0]], a: vec![vec![3.0, -1.0]] };
        let mut state = AdmmState::new(vec![vec![0.0; 2]], vec![vec![0.0; 2]], 1.0).unwrap();
        for _ in 0..4 {
            state = run_round(state, &problem, &cfg);
            assert_eq!(state.theta[0], state.z);
            assert_eq!(state.last().unwrap().max_primal(), 0.0);
        }
    }

    #[test]
    fn identical_workers_stay_identical() {
        let cfg = AdmmConfig::default();
        let problem = Quadratic { h: vec![vec![2.0, 5.0]; 3], a: vec![vec![1.0, -2.0]; 3] };
        let state = AdmmState::new(vec![vec![0.0; 2]; 3], vec![vec![0.0; 2]; 3], 1.0).unwrap();
        let state = run_round(state, &problem, &cfg);
        assert!(state.theta.iter().all(|t| *t == state.theta[0]));
        let p = &state.last().unwrap().primal;
        assert!(p.iter().all(|v| *v == p[0]));
    }

    #[test]
    fn primal_residual_trend_on_quadratics() {
        let cfg = AdmmConfig { max_rounds: 200, ..Default::default() };
        let problem = Quadratic {
            h: vec![vec![1.0, 2.0, 0.5], vec![1.5, 1.0, 2.0], vec![0.8, 3.0, 1.0], vec![2.0, 0.7, 1.2]],
            a: vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, -1.0], vec![2.0, 2.0, 0.0], vec![-1.0, 0.5, 1.0]],
        };
        let state = AdmmState::new(vec![vec![0.0; 3]; 4], vec![vec![0.0; 3]; 4], 1.0).unwrap();
        let (state, status) = iterate(state, &problem, &cfg);
        assert_eq!(status, StopStatus::Converged);
        let series: Vec<f64> = state.history.iter().map(RoundRecord::max_primal).collect();
        let smooth: Vec<f64> = series.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
        assert!(smooth.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{smooth:?}");
        let last = state.last().unwrap();
        assert!(state.theta.iter().all(|t| {
            norm(&t.iter().zip(&state.z).map(|(a, b)| a - b).collect::<Vec<_>>()) <= last.eps_pri
        }));
        let table = state.trace_table();
        assert_eq!(table.lines().count(), state.history.len() + 1);
        assert!(table.starts_with("round\tprimal_0"));
    }
}
