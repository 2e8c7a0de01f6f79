//! Exact Gaussian-process regression on a single shard.
//!
//! The training objective is `l(θ) = yᵀC⁻¹y + log|C|` with
//! `C = K(θ) + σ²_e·I`; its gradient with respect to each log-parameter is
//! `Tr((C⁻¹ − γγᵀ)·∂C/∂log θ)` with `γ = C⁻¹y`. Regular grids use the
//! Toeplitz recursion, everything else a dense Cholesky factorization.

use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    eval_composite, is_regular_grid, kernel_matrix, prior_variance, Hyper, HyperParams, KernelSpec, NUM_HYPER,
};
use crate::linalg::{spd_factor, SpdFactorization, ToeplitzOperator};
use crate::optim::{minimize, LbfgsConfig, OptimStatus};

/// Relative diagonal jitter added before every factorization.
pub const JITTER: f64 = 1e-8;

/// Log-domain magnitude beyond which a hyperparameter is treated as unevaluable.
const LOG_BOUND: f64 = 40.0;

/// A contiguous piece of the training data owned by one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    times: Vec<f64>,
    values: Vec<f64>,
    regular_grid: bool,
}

impl Shard {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidShard(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidShard("shard is empty".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidShard("times must be strictly increasing".into()));
        }
        if values.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::InvalidShard("non-finite entry".into()));
        }
        let regular_grid = is_regular_grid(&times);
        Ok(Self {
            times,
            values,
            regular_grid,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn regular_grid(&self) -> bool {
        self.regular_grid
    }

    /// Appends points that lie after the current last time.
    pub fn extended(&self, times: &[f64], values: &[f64]) -> Result<Self> {
        let mut t = self.times.clone();
        let mut v = self.values.clone();
        t.extend_from_slice(times);
        v.extend_from_slice(values);
        Self::new(t, v)
    }
}

/// Solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    /// Use the Toeplitz recursion when the shard lies on a regular grid.
    pub toeplitz: bool,
    pub optimizer: LbfgsConfig,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            toeplitz: true,
            optimizer: LbfgsConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Dense { f: SpdFactorization, jitter: f64 },
    Toeplitz { op: ToeplitzOperator, step: f64, jitter: f64 },
}

impl Factor {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factor::Dense { f, .. } => Ok(f.solve(b)),
            Factor::Toeplitz { op, .. } => op.solve(b),
        }
    }

    fn logdet(&self) -> Result<f64> {
        match self {
            Factor::Dense { f, .. } => Ok(f.logdet()),
            Factor::Toeplitz { op, .. } => op.logdet(),
        }
    }

    /// Diagonal jitter that was added before factorizing.
    fn jitter(&self) -> f64 {
        match self {
            Factor::Dense { jitter, .. } | Factor::Toeplitz { jitter, .. } => *jitter,
        }
    }

    fn is_toeplitz(&self) -> bool {
        matches!(self, Factor::Toeplitz { .. })
    }
}

fn base_jitter(hp: &HyperParams, spec: &KernelSpec) -> f64 {
    JITTER * (prior_variance(hp, spec) + hp.sigma2_e)
}

fn dense_covariance(times: &[f64], hp: &HyperParams, spec: &KernelSpec, jitter: f64) -> DMatrix<f64> {
    let mut c = kernel_matrix(times, times, hp, spec);
    for i in 0..times.len() {
        c[(i, i)] += hp.sigma2_e + jitter;
    }
    c
}

/// Factorizes `C(θ)` plus jitter, preferring the Toeplitz path on regular grids.
/// A failed dense factorization is retried once with ten times the jitter.
fn factorize(shard: &Shard, hp: &HyperParams, spec: &KernelSpec, opts: &GpOptions) -> Result<Factor> {
    let jitter = base_jitter(hp, spec);
    if opts.toeplitz && shard.regular_grid && shard.len() > 1 {
        let step = shard.times[1] - shard.times[0];
        let mut column: Vec<f64> = (0..shard.len())
            .map(|k| eval_composite(k as f64 * step, hp, spec))
            .collect();
        column[0] += hp.sigma2_e + jitter;
        let op = ToeplitzOperator::new(column)?;
        match op.logdet() {
            Ok(_) => return Ok(Factor::Toeplitz { op, step, jitter }),
            Err(e) => debug!("Toeplitz path unavailable ({e}); falling back to dense Cholesky"),
        }
    }
    match spd_factor(&dense_covariance(&shard.times, hp, spec, jitter)) {
        Ok(f) => Ok(Factor::Dense { f, jitter }),
        Err(Error::NotPositiveDefinite { .. }) => {
            warn!("covariance not positive definite; retrying with jitter x10");
            let jitter = 10.0 * jitter;
            spd_factor(&dense_covariance(&shard.times, hp, spec, jitter)).map(|f| Factor::Dense { f, jitter })
        }
        Err(e) => Err(e),
    }
}

/// Log-domain derivatives of `k(tau) + σ²_e·[tau == 0]` for all seven parameters.
fn grad_all(tau: f64, hp: &HyperParams, spec: &KernelSpec) -> [f64; NUM_HYPER] {
    use crate::kernel::Term;
    let mut g = [0.0; NUM_HYPER];
    if spec.is_active(Term::Weekly) {
        let s = (PI * tau / spec.lambda1).sin();
        let s2 = s * s;
        let k = hp.sigma2_p1 * (-s2 / hp.l2_p1).exp();
        g[Hyper::SigmaP1.index()] = k;
        g[Hyper::LenP1.index()] = k * s2 / hp.l2_p1;
    }
    if spec.is_active(Term::Daily) {
        let s = (PI * tau / spec.lambda2).sin();
        let s2 = s * s;
        let k = hp.sigma2_p2 * (-s2 / hp.l2_p2).exp();
        g[Hyper::SigmaP2.index()] = k;
        g[Hyper::LenP2.index()] = k * s2 / hp.l2_p2;
    }
    if spec.is_active(Term::Se) {
        let r = tau * tau / (2.0 * hp.l2_lt);
        let k = hp.sigma2_lt * (-r).exp();
        g[Hyper::SigmaLt.index()] = k;
        g[Hyper::LenLt.index()] = k * r;
    }
    if tau == 0.0 {
        g[Hyper::Noise.index()] = hp.sigma2_e;
    }
    g
}

/// Objective value and optional log-domain gradient.
fn evaluate(
    shard: &Shard,
    hp: &HyperParams,
    spec: &KernelSpec,
    opts: &GpOptions,
    with_grad: bool,
) -> Result<(f64, Option<[f64; NUM_HYPER]>)> {
    let factor = factorize(shard, hp, spec, opts)?;
    let y = &shard.values;
    let gamma = factor.solve(y)?;
    let value = y.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>() + factor.logdet()?;
    if !with_grad {
        return Ok((value, None));
    }
    let n = shard.len();
    let mut grad = [0.0; NUM_HYPER];
    // tr(C⁻¹) − γᵀγ, the weight of anything added uniformly to the diagonal
    let diagonal_weight;
    match &factor {
        Factor::Toeplitz { op, step, .. } => {
            let sums = op.inverse_diagonal_sums()?;
            diagonal_weight = sums[0] - gamma.iter().map(|g| g * g).sum::<f64>();
            for k in 0..n {
                let auto: f64 = gamma[..n - k].iter().zip(&gamma[k..]).map(|(a, b)| a * b).sum();
                let weight = if k == 0 { 1.0 } else { 2.0 };
                let d = grad_all(k as f64 * step, hp, spec);
                let w = weight * (sums[k] - auto);
                for (g, dk) in grad.iter_mut().zip(d) {
                    *g += w * dk;
                }
            }
        }
        Factor::Dense { f, .. } => {
            let inv = f.inverse();
            diagonal_weight = (0..n).map(|i| inv[(i, i)] - gamma[i] * gamma[i]).sum::<f64>();
            let t = &shard.times;
            for j in 0..n {
                for i in j..n {
                    let weight = if i == j { 1.0 } else { 2.0 };
                    let w = weight * (inv[(i, j)] - gamma[i] * gamma[j]);
                    let d = grad_all(t[i] - t[j], hp, spec);
                    for (g, dk) in grad.iter_mut().zip(d) {
                        *g += w * dk;
                    }
                }
            }
        }
    }
    // the jitter is proportional to k(0) + σ²_e, so it moves with every variance
    let jitter_rate = diagonal_weight * factor.jitter() / (prior_variance(hp, spec) + hp.sigma2_e);
    for h in [Hyper::SigmaP1, Hyper::SigmaP2, Hyper::SigmaLt, Hyper::Noise] {
        if h.term().is_none_or(|t| spec.is_active(t)) {
            grad[h.index()] += jitter_rate * hp.get(h);
        }
    }
    Ok((value, Some(grad)))
}

/// `yᵀC⁻¹y + log|C|` (the constant `n·log 2π` is omitted).
pub fn nll(shard: &Shard, hp: &HyperParams, spec: &KernelSpec) -> Result<f64> {
    nll_with(shard, hp, spec, &GpOptions::default())
}

pub fn nll_with(shard: &Shard, hp: &HyperParams, spec: &KernelSpec, opts: &GpOptions) -> Result<f64> {
    Ok(evaluate(shard, hp, spec, opts, false)?.0)
}

/// Gradient of [`nll`] with respect to the log of every parameter, ordered as
/// [`Hyper::ALL`]. Parameters of inactive terms get a zero component.
pub fn nll_grad(shard: &Shard, hp: &HyperParams, spec: &KernelSpec) -> Result<[f64; NUM_HYPER]> {
    nll_grad_with(shard, hp, spec, &GpOptions::default())
}

pub fn nll_grad_with(
    shard: &Shard,
    hp: &HyperParams,
    spec: &KernelSpec,
    opts: &GpOptions,
) -> Result<[f64; NUM_HYPER]> {
    Ok(evaluate(shard, hp, spec, opts, true)?.1.expect("gradient requested"))
}

pub fn nll_and_grad(
    shard: &Shard,
    hp: &HyperParams,
    spec: &KernelSpec,
    opts: &GpOptions,
) -> Result<(f64, [f64; NUM_HYPER])> {
    let (v, g) = evaluate(shard, hp, spec, opts, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Augmented-Lagrangian terms `ζᵀ(θ − z) + (ρ/2)‖θ − z‖²` over the free
/// log-domain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    pub rho: f64,
}

impl Proximal {
    pub fn value(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.z)
            .zip(&self.zeta)
            .map(|((t, z), u)| u * (t - z) + 0.5 * self.rho * (t - z) * (t - z))
            .sum()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.z)
            .zip(&self.zeta)
            .map(|((t, z), u)| u + self.rho * (t - z))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub hp: HyperParams,
    /// Final value of the minimized objective (NLL plus proximal terms).
    pub objective: f64,
    /// NLL alone at the returned point.
    pub nll: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
    pub trace: Vec<f64>,
}

impl FitResult {
    /// Set when the optimizer could not make any progress from the start.
    pub fn failed(&self) -> bool {
        self.status == OptimStatus::Failed
    }
}

/// Minimizes the shard NLL, optionally with an ADMM proximal term, over the
/// log values of `spec.free_params()`. The noise variance stays at `init`.
pub fn fit_local(
    shard: &Shard,
    init: &HyperParams,
    spec: &KernelSpec,
    proximal: Option<&Proximal>,
    opts: &GpOptions,
) -> Result<FitResult> {
    init.validate()?;
    spec.validate()?;
    let free = spec.free_params();
    if let Some(p) = proximal {
        if p.z.len() != free.len() || p.zeta.len() != free.len() {
            return Err(Error::DimensionMismatch(format!(
                "proximal vectors must have {} entries",
                free.len()
            )));
        }
        if !(p.rho > 0.0) {
            return Err(Error::InvalidConfig("rho must be positive".into()));
        }
    }
    let x0 = init.log_subset(&free);
    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        if x.iter().any(|v| v.abs() > LOG_BOUND) {
            return None;
        }
        let hp = init.with_log_subset(&free, x);
        let (v, g) = nll_and_grad(shard, &hp, spec, opts).ok()?;
        let mut grad: Vec<f64> = free.iter().map(|h| g[h.index()]).collect();
        let mut value = v;
        if let Some(p) = proximal {
            value += p.value(x);
            for (gi, pi) in grad.iter_mut().zip(p.grad(x)) {
                *gi += pi;
            }
        }
        Some((value, grad))
    };
    let r = minimize(objective, &x0, &opts.optimizer);
    if r.status == OptimStatus::Failed {
        warn!("local fit could not evaluate its starting point");
    }
    let hp = init.with_log_subset(&free, &r.x);
    let nll_value = match proximal {
        Some(p) if r.value.is_finite() => r.value - p.value(&r.x),
        _ => r.value,
    };
    Ok(FitResult {
        hp,
        objective: r.value,
        nll: nll_value,
        grad_norm: r.grad_norm(),
        iterations: r.iterations,
        evaluations: r.evaluations,
        status: r.status,
        trace: r.trace,
    })
}

/// Half the variance of the lag-1 differences; a cheap white-noise level estimate.
pub fn estimate_noise(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 1e-6;
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let v = 0.5 * variance(&diffs);
    if v > 0.0 {
        v
    } else {
        1e-6 * variance(values).max(1.0)
    }
}

pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Starting point: every variance set to the data variance, every squared
/// length-scale set to one.
pub fn default_init(values: &[f64], noise: f64) -> HyperParams {
    let v = variance(values);
    let v = if v > 0.0 { v } else { 1.0 };
    HyperParams {
        sigma2_p1: v,
        sigma2_p2: v,
        sigma2_lt: v,
        l2_p1: 1.0,
        l2_p2: 1.0,
        l2_lt: 1.0,
        sigma2_e: noise,
    }
}

/// Posterior mean and latent-function variance at test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// A fitted shard with its covariance factorization and `α = C⁻¹y` cached.
#[derive(Debug, Clone)]
pub struct LocalModel {
    shard: Shard,
    hp: HyperParams,
    spec: KernelSpec,
    factor: Factor,
    alpha: Vec<f64>,
}

impl LocalModel {
    pub fn new(shard: Shard, hp: HyperParams, spec: KernelSpec, opts: &GpOptions) -> Result<Self> {
        hp.validate()?;
        spec.validate()?;
        let factor = factorize(&shard, &hp, &spec, opts)?;
        let alpha = factor.solve(&shard.values)?;
        Ok(Self {
            shard,
            hp,
            spec,
            factor,
            alpha,
        })
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn uses_toeplitz(&self) -> bool {
        self.factor.is_toeplitz()
    }

    pub fn predict(&self, test_times: &[f64]) -> Result<PosteriorPrediction> {
        let prior = prior_variance(&self.hp, &self.spec);
        let floor = 1e-12 * prior.max(f64::MIN_POSITIVE);
        let mut mean = Vec::with_capacity(test_times.len());
        let mut var = Vec::with_capacity(test_times.len());
        for &t in test_times {
            let kstar: Vec<f64> = self
                .shard
                .times
                .iter()
                .map(|&ti| eval_composite(ti - t, &self.hp, &self.spec))
                .collect();
            mean.push(kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum());
            let v = self.factor.solve(&kstar)?;
            let reduction: f64 = kstar.iter().zip(&v).map(|(a, b)| a * b).sum();
            var.push((prior - reduction).max(floor));
        }
        Ok(PosteriorPrediction { mean, variance: var })
    }
}

/// Convenience wrapper: build the model and predict.
pub fn predict(model: &LocalModel, test_times: &[f64]) -> Result<PosteriorPrediction> {
    model.predict(test_times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Term;
    use approx::assert_relative_eq;

    fn hp(values: [f64; 7]) -> HyperParams {
        HyperParams::new(values).unwrap()
    }

    #[test]
    fn shard_validation() {
        assert!(Shard::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Shard::new(vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(Shard::new(vec![], vec![]).is_err());
        assert!(Shard::new(vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap().regular_grid());
        assert!(!Shard::new(vec![0.0, 1.0, 3.0], vec![0.0; 3]).unwrap().regular_grid());
    }

    #[test]
    fn scalar_nll() {
        let spec = KernelSpec::new(168.0, 24.0, &[Term::Se]).unwrap();
        // σ²_lt negligible, σ²_e = 1 → C = [1]
        let p = hp([1.0, 1.0, 1e-300, 1.0, 1.0, 1.0, 1.0]);
        let shard = Shard::new(vec![0.0], vec![0.0]).unwrap();
        assert!(nll(&shard, &p, &spec).unwrap().abs() < 1e-7);
        let p = hp([1.0, 1.0, 1e-300, 1.0, 1.0, 1.0, 4.0]);
        let shard = Shard::new(vec![0.0], vec![2.0]).unwrap();
        assert_relative_eq!(nll(&shard, &p, &spec).unwrap(), 1.0 + 4f64.ln(), epsilon = 1e-7);
    }

    #[test]
    fn noise_gradient_with_zero_data() {
        let spec = KernelSpec::default();
        let p = hp([1.0, 0.5, 2.0, 0.8, 1.2, 20.0, 0.3]);
        let times: Vec<f64> = (0..10).map(|i| (i * 2) as f64).collect();
        let shard = Shard::new(times.clone(), vec![0.0; 10]).unwrap();
        let g = nll_grad(&shard, &p, &spec).unwrap();
        let c = dense_covariance(&times, &p, &spec, base_jitter(&p, &spec));
        let trace = c.try_inverse().unwrap().trace();
        // the jitter scales with σ²_e as well, adding a factor (1 + JITTER)
        assert_relative_eq!(g[Hyper::Noise.index()], trace * 0.3 * (1.0 + JITTER), epsilon = 1e-9);
        assert_relative_eq!(g[Hyper::Noise.index()], trace * 0.3, max_relative = 1e-7);
    }

    #[test]
    fn toeplitz_and_dense_agree() {
        let spec = KernelSpec::default();
        let p = hp([1.5, 0.7, 2.0, 0.6, 1.1, 15.0, 0.2]);
        let times: Vec<f64> = (0..20).map(f64::from).collect();
        let values: Vec<f64> = times.iter().map(|t| (t * 0.3).sin() + 0.1 * (t * 1.7).cos()).collect();
        let shard = Shard::new(times, values).unwrap();
        let dense = GpOptions { toeplitz: false, ..Default::default() };
        let (vt, gt) = nll_and_grad(&shard, &p, &spec, &GpOptions::default()).unwrap();
        let (vd, gd) = nll_and_grad(&shard, &p, &spec, &dense).unwrap();
        assert!((vt - vd).abs() <= 1e-6);
        for (a, b) in gt.iter().zip(&gd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn interpolates_without_noise() {
        let spec = KernelSpec::new(168.0, 24.0, &[Term::Se]).unwrap();
        let p = hp([1.0, 1.0, 1.0, 1.0, 1.0, 4.0, 1e-12]);
        let times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let values = vec![0.3, -0.2, 0.5, 0.1, -0.4];
        let model = LocalModel::new(Shard::new(times, values.clone()).unwrap(), p, spec, &GpOptions::default()).unwrap();
        let pred = model.predict(&[2.0]).unwrap();
        assert!((pred.mean[0] - values[2]).abs() <= 1e-4);
        assert!(pred.variance[0] < 1e-6);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let spec = KernelSpec::new(168.0, 24.0, &[Term::Se]).unwrap();
        let p = hp([1.0, 1.0, 2.0, 1.0, 1.0, 4.0, 0.1]);
        let shard = Shard::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 1.5]).unwrap();
        let model = LocalModel::new(shard, p, spec, &GpOptions::default()).unwrap();
        let pred = model.predict(&[1e4]).unwrap();
        assert!(pred.mean[0].abs() < 1e-12);
        assert_relative_eq!(pred.variance[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn noise_estimate_on_white_noise_level() {
        assert_relative_eq!(estimate_noise(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]), 0.5 * 1.2, epsilon = 1e-12);
        assert!(estimate_noise(&[2.0, 2.0, 2.0, 2.0]) > 0.0);
    }

    #[test]
    fn proximal_with_huge_rho_pins_to_center() {
        let spec = KernelSpec::default();
        let times: Vec<f64> = (0..40).map(f64::from).collect();
        let values: Vec<f64> = times.iter().map(|t| (t * 0.26).sin() * 3.0 + (t * 0.9).cos()).collect();
        let shard = Shard::new(times, values).unwrap();
        let init = default_init(shard.values(), 0.1);
        let free = spec.free_params();
        let z: Vec<f64> = vec![0.5, -0.3, 0.2, 0.1, 0.4, 2.0];
        let prox = Proximal { z: z.clone(), zeta: vec![0.0; free.len()], rho: 1e7 };
        let r = fit_local(&shard, &init, &spec, Some(&prox), &GpOptions::default()).unwrap();
        let got = r.hp.log_subset(&free);
        let dist: f64 = got.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= 1e-3, "distance {dist}");
    }
}
