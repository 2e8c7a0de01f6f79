//! Self-check suite run by `scalegp validate`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalegp::admm::{consensus, dual_residual};
use scalegp::data::{mape, rmse};
use scalegp::fusion::{fuse, mirror_descent, objective, softmax_weights, solve_qp_single, FusionWeights, LocalPredictionSet, MirrorConfig};
use scalegp::gp::{nll_and_grad, nll_with, GpOptions, Shard};
use scalegp::kernel::{eval_composite, HyperParams, KernelSpec, NUM_HYPER};
use scalegp::linalg::dense::spd_factor;
use scalegp::linalg::toeplitz::ToeplitzOperator;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed error.
    pub error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error <= self.tolerance
    }
}

fn random_hp(rng: &mut ChaCha8Rng) -> HyperParams {
    let mut v = [0.0; NUM_HYPER];
    for x in v.iter_mut().take(3) {
        *x = rng.gen_range(-1.0f64..1.5).exp();
    }
    for x in v.iter_mut().skip(3).take(2) {
        *x = rng.gen_range(-0.5f64..1.5).exp();
    }
    v[5] = rng.gen_range(1.0f64..5.0).exp();
    v[6] = rng.gen_range(-3.0f64..-0.5).exp();
    HyperParams::new(v).expect("positive draws")
}

fn random_shard(rng: &mut ChaCha8Rng, n: usize, regular: bool) -> Shard {
    let mut t = 0.0;
    let times: Vec<f64> = (0..n)
        .map(|_| {
            t += if regular { 1.0 } else { rng.gen_range(0.3..1.7) };
            t
        })
        .collect();
    let values = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Shard::new(times, values).expect("valid shard")
}

/// Worst relative error of the analytic log-domain gradient against central
/// differences.
pub fn gradient_check(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = KernelSpec::default();
    let mut worst = 0.0f64;
    for d in 0..draws {
        let n = rng.gen_range(2..=40);
        let shard = random_shard(&mut rng, n, d % 2 == 0);
        let hp = random_hp(&mut rng);
        for toeplitz in [false, true] {
            let opts = GpOptions { toeplitz, ..Default::default() };
            let (_, g) = match nll_and_grad(&shard, &hp, &spec, &opts) {
                Ok(r) => r,
                Err(_) => return f64::INFINITY,
            };
            let log = hp.to_log();
            for i in 0..NUM_HYPER {
                let h = 1e-5;
                let mut up = log;
                let mut down = log;
                up[i] += h;
                down[i] -= h;
                let fu = nll_with(&shard, &HyperParams::from_log(up), &spec, &opts).unwrap_or(f64::NAN);
                let fd = nll_with(&shard, &HyperParams::from_log(down), &spec, &opts).unwrap_or(f64::NAN);
                let fdiff = (fu - fd) / (2.0 * h);
                worst = worst.max((g[i] - fdiff).abs() / fdiff.abs().max(1.0));
            }
        }
    }
    worst
}

fn toeplitz_column(n: usize, hp: &HyperParams, spec: &KernelSpec) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|k| eval_composite(k as f64, hp, spec)).collect();
    c[0] += hp.sigma2_e;
    c
}

/// Worst disagreement between the Toeplitz recursion and dense Cholesky on
/// solves and log-determinants, relative to the dense values.
pub fn toeplitz_check(sizes: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = KernelSpec::default();
    let mut worst = 0.0f64;
    for &n in sizes {
        let hp = random_hp(&mut rng);
        let op = match ToeplitzOperator::new(toeplitz_column(n, &hp, &spec)) {
            Ok(op) => op,
            Err(_) => return f64::INFINITY,
        };
        let dense = match spd_factor(&op.materialize()) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (Ok(x), Ok(ld)) = (op.solve(&b), op.logdet()) else {
            return f64::INFINITY;
        };
        let xd = dense.solve(&b);
        let scale = xd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, e) in x.iter().zip(&xd) {
            worst = worst.max((a - e).abs() / scale);
        }
        let ldd = dense.logdet();
        worst = worst.max((ld - ldd).abs() / ldd.abs().max(1.0));
    }
    worst
}

/// Calls `visit` on every point of the simplex grid with spacing `1/steps`.
pub fn simplex_grid(k: usize, steps: usize, visit: &mut impl FnMut(&[f64])) {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<f64>, visit: &mut impl FnMut(&[f64])) {
        if cur.len() == k - 1 {
            cur.push(left as f64 / steps as f64);
            visit(cur);
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i as f64 / steps as f64);
            rec(k, left - i, steps, cur, visit);
            cur.pop();
        }
    }
    rec(k, steps, steps, &mut Vec::with_capacity(k), visit);
}

/// Best objective over the simplex grid.
pub fn grid_minimum(locals: &LocalPredictionSet, truths: &[f64], steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    simplex_grid(locals.experts(), steps, &mut |b| best = best.min(objective(locals, truths, b)));
    best
}

/// Best single-point objective `(Σβa/Σβb − y)²` over the simplex grid, with
/// `a = μ/σ²` and `b = 1/σ²`. Partial sums are carried down the recursion so
/// four-expert grids at step 1e-3 stay cheap.
pub fn grid_minimum_single(means: &[f64], variances: &[f64], y: f64, steps: usize) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(a: &[f64], b: &[f64], y: f64, left: usize, h: f64, num: f64, den: f64, best: &mut f64) {
        if a.len() == 1 {
            let w = left as f64 * h;
            let (n, d) = (num + w * a[0], den + w * b[0]);
            let r = n / d - y;
            *best = best.min(r * r);
            return;
        }
        for i in 0..=left {
            let w = i as f64 * h;
            rec(&a[1..], &b[1..], y, left - i, h, num + w * a[0], den + w * b[0], best);
        }
    }
    let a: Vec<f64> = means.iter().zip(variances).map(|(m, v)| m / v).collect();
    let b: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let mut best = f64::INFINITY;
    rec(&a, &b, y, steps, 1.0 / steps as f64, 0.0, 0.0, &mut best);
    best
}

/// A random single-point fusion instance; expert means and the truth are
/// drawn on a common scale so the truth sometimes falls outside their span.
pub fn random_instance(rng: &mut ChaCha8Rng, k: usize, equal_variance: bool) -> (LocalPredictionSet, f64) {
    let mean: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
    let variance: Vec<Vec<f64>> = (0..k)
        .map(|_| vec![if equal_variance { 1.0 } else { rng.gen_range(-1.5f64..1.5).exp() }])
        .collect();
    let truth = rng.gen_range(-3.5..3.5);
    (LocalPredictionSet::new(mean, variance).expect("valid instance"), truth)
}

/// Largest amount by which the QP solution exceeds the grid-search minimum,
/// over `count` random instances for every `(k, count)` pair.
pub fn qp_check(plan: &[(usize, usize)], steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &(k, count) in plan {
        for _ in 0..count {
            let (locals, y) = random_instance(&mut rng, k, false);
            let Ok(qp) = solve_qp_single(&locals, y) else {
                return f64::INFINITY;
            };
            let means: Vec<f64> = (0..k).map(|i| locals.mean(i, 0)).collect();
            let vars: Vec<f64> = (0..k).map(|i| locals.variance(i, 0)).collect();
            let grid = grid_minimum_single(&means, &vars, y, steps);
            worst = worst.max(qp.objective - grid);
        }
    }
    worst
}

/// Worst ratio of best-iterate suboptimality to the theoretical bound, on
/// equal-variance single-point instances where the optimum is known exactly.
pub fn mirror_check(ks: &[usize], per_k: usize, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MirrorConfig {
        iterations,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for &k in ks {
        for _ in 0..per_k {
            let (locals, y) = random_instance(&mut rng, k, true);
            let means: Vec<f64> = (0..k).map(|i| locals.mean(i, 0)).collect();
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let nearest = y.clamp(lo, hi);
            let optimum = (nearest - y) * (nearest - y);
            let Ok(r) = mirror_descent(&locals, &[y], &cfg) else {
                return f64::INFINITY;
            };
            let gap = r.objective - optimum;
            let bound = r.bound();
            let ratio = if bound > 0.0 { gap / bound } else if gap <= 1e-12 { 0.0 } else { f64::INFINITY };
            worst = worst.max(ratio);
        }
    }
    worst
}

/// Fused mean and variance against a direct evaluation of the weighted
/// precision formulas.
pub fn fusion_algebra_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = 3;
        let points = 5;
        let mean: Vec<Vec<f64>> = (0..k).map(|_| (0..points).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let var: Vec<Vec<f64>> = (0..k).map(|_| (0..points).map(|_| rng.gen_range(0.1..3.0)).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let locals = LocalPredictionSet::new(mean.clone(), var.clone()).expect("valid");
        let beta = FusionWeights::new(raw).expect("positive");
        let Ok(f) = fuse(&locals, &beta) else {
            return f64::INFINITY;
        };
        let b = beta.as_slice();
        for m in 0..points {
            let precision: f64 = (0..k).map(|i| b[i] / var[i][m]).sum();
            let weighted: f64 = (0..k).map(|i| b[i] * mean[i][m] / var[i][m]).sum();
            let v = 1.0 / precision;
            worst = worst.max((f.variance[m] - v).abs()).max((f.mean[m] - v * weighted).abs());
        }
    }
    worst
}

/// Small closed-form examples: softmax weights, metrics, consensus averaging.
pub fn arithmetic_check() -> f64 {
    let mut worst = 0.0f64;
    let mut diff = |a: f64, b: f64| worst = worst.max((a - b).abs());
    match softmax_weights(&[0.1, 0.3]) {
        Ok(w) => {
            let den = (-0.1f64).exp() + (-0.3f64).exp();
            diff(w.as_slice()[0], (-0.1f64).exp() / den);
            diff(w.as_slice()[1], (-0.3f64).exp() / den);
        }
        Err(_) => return f64::INFINITY,
    }
    diff(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap_or(f64::NAN), (4.0f64 / 3.0).sqrt());
    diff(mape(&[110.0, 90.0], &[100.0, 100.0]).unwrap_or(f64::NAN), 10.0);
    let z = consensus(&[vec![1.0, 2.0], vec![3.0, 6.0]], &[vec![0.5, 0.0], vec![-0.5, 1.0]], 2.0);
    diff(z[0], 2.0);
    diff(z[1], 4.0 + 0.25);
    diff(dual_residual(&[1.0, 1.0], &[4.0, 5.0], 0.5), 2.5);
    worst
}

/// Runs every check; tolerances are multiplied by `tolerance_scale`.
pub fn run_suite(tolerance_scale: f64) -> Vec<Check> {
    let mut out = vec![];
    let mut run = |name: &'static str, tolerance: f64, f: &dyn Fn() -> f64| {
        let start = Instant::now();
        let error = f();
        out.push(Check {
            name,
            error,
            tolerance: tolerance * tolerance_scale,
            seconds: start.elapsed().as_secs_f64(),
        });
    };
    run("gradient vs finite differences", 1e-4, &|| gradient_check(100, 11));
    run("toeplitz vs dense cholesky", 1e-6, &|| toeplitz_check(&[8, 16, 32, 64, 128, 256], 12));
    run("qp vs simplex grid search", 1e-6, &|| qp_check(&[(2, 20), (3, 20)], 1000, 13));
    run("mirror descent within bound", 1.0, &|| mirror_check(&[2, 8, 32], 5, 500, 14));
    run("fused mean and variance formulas", 1e-12, &|| fusion_algebra_check(15));
    run("softmax, metrics and consensus arithmetic", 1e-12, &arithmetic_check);
    out
}

pub fn table(checks: &[Check]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<42} {:>12} {:>12} {:>9}  result", "check", "error", "tolerance", "time (s)");
    for c in checks {
        let _ = writeln!(
            s,
            "{:<42} {:>12.3e} {:>12.3e} {:>9.2}  {}",
            c.name,
            c.error,
            c.tolerance,
            c.seconds,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}
