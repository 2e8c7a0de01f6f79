//! Generalized product-of-experts fusion of local GP predictions.
//!
//! With weights `β` on the simplex the fused posterior at each point is
//! `σ*² = (Σ β_i σ_i⁻²)⁻¹` and `μ* = σ*² Σ β_i σ_i⁻² μ_i`. The weights come
//! from a validation set (exact single-point QP or mirror descent), from a
//! softmax of per-expert validation errors, or from the entropy heuristic.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpOptions, LocalModel, PosteriorPrediction, Shard};
use crate::kernel::{prior_variance, HyperParams, KernelSpec};

/// Variances below this are clamped before fusing.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Expert means and variances at a common set of points; `mean[i][m]` is
/// expert `i` at point `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPredictionSet {
    mean: Vec<Vec<f64>>,
    variance: Vec<Vec<f64>>,
}

impl LocalPredictionSet {
    pub fn new(mean: Vec<Vec<f64>>, variance: Vec<Vec<f64>>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::NoExperts);
        }
        let m = mean[0].len();
        if variance.len() != mean.len() || mean.iter().chain(&variance).any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("every expert needs a mean and variance per point".into()));
        }
        if mean.iter().chain(&variance).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("expert predictions must be finite".into()));
        }
        let mut variance = variance;
        let mut clamped = 0;
        for v in variance.iter_mut().flatten() {
            if *v < MIN_VARIANCE {
                *v = MIN_VARIANCE;
                clamped += 1;
            }
        }
        if clamped > 0 {
            warn!("clamped {clamped} expert variances to {MIN_VARIANCE:e}");
        }
        Ok(Self { mean, variance })
    }

    pub fn from_predictions(preds: &[PosteriorPrediction]) -> Result<Self> {
        Self::new(
            preds.iter().map(|p| p.mean.clone()).collect(),
            preds.iter().map(|p| p.variance.clone()).collect(),
        )
    }

    pub fn experts(&self) -> usize {
        self.mean.len()
    }

    pub fn points(&self) -> usize {
        self.mean[0].len()
    }

    pub fn mean(&self, expert: usize, point: usize) -> f64 {
        self.mean[expert][point]
    }

    pub fn variance(&self, expert: usize, point: usize) -> f64 {
        self.variance[expert][point]
    }

    /// `σ_i⁻² μ_i`.
    pub fn a(&self, expert: usize, point: usize) -> f64 {
        self.mean[expert][point] / self.variance[expert][point]
    }

    /// `σ_i⁻²`.
    pub fn b(&self, expert: usize, point: usize) -> f64 {
        1.0 / self.variance[expert][point]
    }

    pub fn expert_means(&self, expert: usize) -> &[f64] {
        &self.mean[expert]
    }

    pub fn expert_variances(&self, expert: usize) -> &[f64] {
        &self.variance[expert]
    }

    /// Restricts to the given point indices.
    pub fn select_points(&self, points: &[usize]) -> Self {
        let pick = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| points.iter().map(|&m| r[m]).collect()).collect();
        Self {
            mean: pick(&self.mean),
            variance: pick(&self.variance),
        }
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    /// Accepts any nonnegative vector with a positive sum and normalizes it.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::NoExperts);
        }
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("weights must not all be zero".into()));
        }
        Ok(Self(raw.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn unit(k: usize, j: usize) -> Self {
        let mut v = vec![0.0; k];
        v[j] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&b| b > 0.0).map(|b| b * b.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Weights used at each point.
    pub weights: Vec<FusionWeights>,
    pub locals: LocalPredictionSet,
}

fn fuse_point(locals: &LocalPredictionSet, m: usize, beta: &[f64]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &w) in beta.iter().enumerate() {
        num += w * locals.a(i, m);
        den += w * locals.b(i, m);
    }
    (num / den, 1.0 / den)
}

/// The same weights at every point.
pub fn fuse(locals: &LocalPredictionSet, beta: &FusionWeights) -> Result<FusedPrediction> {
    fuse_pointwise(locals, &vec![beta.clone(); locals.points()])
}

/// Separate weights per point.
pub fn fuse_pointwise(locals: &LocalPredictionSet, betas: &[FusionWeights]) -> Result<FusedPrediction> {
    if betas.len() != locals.points() {
        return Err(Error::DimensionMismatch(format!("{} weight vectors for {} points", betas.len(), locals.points())));
    }
    if betas.iter().any(|b| b.len() != locals.experts()) {
        return Err(Error::DimensionMismatch("weight length differs from expert count".into()));
    }
    let (mean, variance) = (0..locals.points()).map(|m| fuse_point(locals, m, betas[m].as_slice())).unzip();
    Ok(FusedPrediction {
        mean,
        variance,
        weights: betas.to_vec(),
        locals: locals.clone(),
    })
}

/// `f(β) = Σ_m (y_m − ŷ_m(β))²`.
pub fn objective(locals: &LocalPredictionSet, truths: &[f64], beta: &[f64]) -> f64 {
    truths
        .iter()
        .enumerate()
        .map(|(m, y)| (y - fuse_point(locals, m, beta).0).powi(2))
        .sum()
}

/// `∂f/∂β_i = −2 Σ_m (y_m − ŷ_m)(a_im − ŷ_m b_im) / B_m` with `B_m = Σ_j β_j b_jm`.
pub fn gradient(locals: &LocalPredictionSet, truths: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; locals.experts()];
    for (m, y) in truths.iter().enumerate() {
        let den: f64 = beta.iter().enumerate().map(|(i, w)| w * locals.b(i, m)).sum();
        let yhat = beta.iter().enumerate().map(|(i, w)| w * locals.a(i, m)).sum::<f64>() / den;
        let r = y - yhat;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi -= 2.0 * r * (locals.a(i, m) - yhat * locals.b(i, m)) / den;
        }
    }
    g
}

fn check_truths(locals: &LocalPredictionSet, truths: &[f64]) -> Result<()> {
    if truths.len() != locals.points() {
        return Err(Error::DimensionMismatch(format!("{} truths for {} points", truths.len(), locals.points())));
    }
    if truths.is_empty() {
        return Err(Error::InvalidInput("weight optimization needs at least one validation point".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub weights: FusionWeights,
    /// `r = β / Σ_i b_i β_i`, feasible for `Σ b_i r_i = 1, r ≥ 0`.
    pub r: Vec<f64>,
    pub objective: f64,
}

/// Single validation point. The fused mean is the average of the expert means
/// under weights proportional to `β_i b_i`, so the optimum either reaches the
/// truth (when it lies between the extreme expert means) or puts all weight on
/// the expert(s) closest to it. Among optimal weights the one of largest
/// entropy is returned.
pub fn solve_qp_single(locals: &LocalPredictionSet, truth: f64) -> Result<QpSolution> {
    if locals.points() != 1 {
        return Err(Error::InvalidInput(format!(
            "the single-point solver needs exactly one validation point, got {}",
            locals.points()
        )));
    }
    if !truth.is_finite() {
        return Err(Error::InvalidInput("validation truth must be finite".into()));
    }
    let k = locals.experts();
    let c: Vec<f64> = (0..k).map(|i| locals.mean(i, 0) - truth).collect();
    let above = c.iter().any(|&v| v > 0.0);
    let below = c.iter().any(|&v| v < 0.0);
    let beta = if above && below {
        max_entropy_root(&(0..k).map(|i| locals.b(i, 0) * c[i]).collect::<Vec<_>>())
    } else {
        let best = c.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        (0..k).map(|i| if c[i].abs() == best { 1.0 } else { 0.0 }).collect()
    };
    let weights = FusionWeights::new(beta)?;
    let scale: f64 = weights.as_slice().iter().enumerate().map(|(i, w)| w * locals.b(i, 0)).sum();
    let r = weights.as_slice().iter().map(|w| w / scale).collect();
    let objective = objective(locals, &[truth], weights.as_slice());
    Ok(QpSolution { weights, r, objective })
}

/// Maximum-entropy `β` with `Σ β_i d_i = 0`, i.e. `β_i ∝ exp(−λ d_i)` with `λ`
/// chosen so the constraint holds. Needs `d` of mixed sign.
fn max_entropy_root(d: &[f64]) -> Vec<f64> {
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let d: Vec<f64> = d.iter().map(|v| v / scale).collect();
    let weights = |lambda: f64| -> Vec<f64> {
        let top = d.iter().map(|v| -lambda * v).fold(f64::NEG_INFINITY, f64::max);
        d.iter().map(|v| (-lambda * v - top).exp()).collect()
    };
    let phi = |lambda: f64| -> f64 { weights(lambda).iter().zip(&d).map(|(w, v)| w * v).sum() };
    // φ is decreasing in λ
    let (mut lo, mut hi) = (-1.0, 1.0);
    while phi(lo) < 0.0 {
        lo *= 2.0;
    }
    while phi(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (wl, wh) = (weights(lo), weights(hi));
    let (pl, ph) = (phi(lo).abs(), phi(hi).abs());
    if pl <= ph {
        wl
    } else {
        wh
    }
}

/// One exponentiated-gradient step followed by renormalization.
pub fn mirror_step(beta: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    let logs: Vec<f64> = beta.iter().zip(grad).map(|(b, g)| b.ln() - eta * g).collect();
    normalize_logs(&logs)
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorConfig {
    /// `T`.
    pub iterations: usize,
    /// Iterates used to estimate the gradient bound `G`.
    pub pilot: usize,
    /// Largest allowed `|η g_i|` in one step.
    pub max_exponent: f64,
}

impl Default for MirrorConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            pilot: 10,
            max_exponent: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorResult {
    /// Best iterate seen.
    pub weights: FusionWeights,
    pub objective: f64,
    /// `f` at every iterate, starting with the uniform start.
    pub trace: Vec<f64>,
    pub eta: f64,
    /// `√log K`.
    pub r: f64,
    /// Pilot estimate of `max ‖g‖_∞`.
    pub g_pilot: f64,
    /// `max ‖g‖_∞` over every iterate visited.
    pub g_max: f64,
}

impl MirrorResult {
    /// `R·G·√(2/T)` with `G` the largest gradient seen on the trajectory.
    pub fn bound(&self) -> f64 {
        let t = (self.trace.len() - 1).max(1) as f64;
        self.r * self.g_max * (2.0 / t).sqrt()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Mirror descent with the KL geometry from the uniform start, constant step
/// `η = (R/G)·√(2/T)`.
pub fn mirror_descent(locals: &LocalPredictionSet, truths: &[f64], cfg: &MirrorConfig) -> Result<MirrorResult> {
    check_truths(locals, truths)?;
    let k = locals.experts();
    let t = cfg.iterations.max(1);
    let r = (k as f64).ln().sqrt();
    let start = FusionWeights::uniform(k).0;
    if k == 1 {
        let f = objective(locals, truths, &start);
        return Ok(MirrorResult {
            weights: FusionWeights(start),
            objective: f,
            trace: vec![f],
            eta: 0.0,
            r,
            g_pilot: 0.0,
            g_max: 0.0,
        });
    }

    // pilot run with a unit step to gauge the gradient scale
    let mut g_pilot = 0.0f64;
    let mut beta = start.clone();
    for _ in 0..cfg.pilot.max(1) {
        let g = gradient(locals, truths, &beta);
        let gn = inf_norm(&g);
        g_pilot = g_pilot.max(gn);
        if gn == 0.0 {
            break;
        }
        beta = clipped_step(&beta, &g, 1.0 / gn, cfg.max_exponent);
    }
    if g_pilot == 0.0 {
        let f = objective(locals, truths, &start);
        return Ok(MirrorResult {
            weights: FusionWeights(start),
            objective: f,
            trace: vec![f],
            eta: 0.0,
            r,
            g_pilot,
            g_max: 0.0,
        });
    }
    let eta = (r / g_pilot) * (2.0 / t as f64).sqrt();

    let mut beta = start;
    let mut best = beta.clone();
    let mut best_f = objective(locals, truths, &beta);
    let mut trace = vec![best_f];
    let mut g_max = 0.0f64;
    for _ in 0..t {
        let g = gradient(locals, truths, &beta);
        g_max = g_max.max(inf_norm(&g));
        beta = clipped_step(&beta, &g, eta, cfg.max_exponent);
        let f = objective(locals, truths, &beta);
        trace.push(f);
        if f < best_f {
            best_f = f;
            best.clone_from(&beta);
        }
    }
    g_max = g_max.max(inf_norm(&gradient(locals, truths, &beta)));
    Ok(MirrorResult {
        weights: FusionWeights(best),
        objective: best_f,
        trace,
        eta,
        r,
        g_pilot,
        g_max,
    })
}

fn clipped_step(beta: &[f64], g: &[f64], eta: f64, max_exponent: f64) -> Vec<f64> {
    let scaled: Vec<f64> = g.iter().map(|v| (eta * v).clamp(-max_exponent, max_exponent)).collect();
    mirror_step(beta, &scaled, 1.0)
}

/// `β_k ∝ exp(−e_k)`.
pub fn softmax_weights(errors: &[f64]) -> Result<FusionWeights> {
    if errors.is_empty() {
        return Err(Error::NoExperts);
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidInput("validation errors must be finite".into()));
    }
    Ok(FusionWeights(normalize_logs(&errors.iter().map(|e| -e).collect::<Vec<_>>())))
}

/// Root-mean-square validation error of each expert.
pub fn expert_rmse(locals: &LocalPredictionSet, truths: &[f64]) -> Result<Vec<f64>> {
    check_truths(locals, truths)?;
    Ok((0..locals.experts())
        .map(|i| {
            let sse: f64 = truths.iter().enumerate().map(|(m, y)| (locals.mean(i, m) - y).powi(2)).sum();
            (sse / truths.len() as f64).sqrt()
        })
        .collect())
}

/// Per-point weights proportional to the entropy drop `½(log σ_prior² − log σ_i²)`.
pub fn entropy_weights(locals: &LocalPredictionSet, prior_variance: f64) -> Vec<FusionWeights> {
    let k = locals.experts();
    (0..locals.points())
        .map(|m| {
            let raw: Vec<f64> = (0..k)
                .map(|i| (0.5 * (prior_variance.ln() - locals.variance(i, m).ln())).max(0.0))
                .collect();
            FusionWeights::new(raw).unwrap_or_else(|_| FusionWeights::uniform(k))
        })
        .collect()
}

/// Points of a series; `times` strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Points {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// The last `m` points become the validation set, the rest the training part.
pub fn split_validation(times: &[f64], values: &[f64], m: usize) -> Result<(Points, Points)> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch("times and values differ in length".into()));
    }
    if m >= times.len() {
        return Err(Error::InvalidConfig(format!(
            "{m} validation points leave nothing to train on ({} points)",
            times.len()
        )));
    }
    let cut = times.len() - m;
    Ok((
        Points {
            times: times[..cut].to_vec(),
            values: values[..cut].to_vec(),
        },
        Points {
            times: times[cut..].to_vec(),
            values: values[cut..].to_vec(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Exact optimum for a single validation point.
    Qp,
    Mirror,
    Softmax,
    /// Entropy-weighted baseline; ignores the validation set.
    Entropy,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qp" => Ok(Strategy::Qp),
            "mirror" => Ok(Strategy::Mirror),
            "softmax" => Ok(Strategy::Softmax),
            "entropy" => Ok(Strategy::Entropy),
            other => Err(Error::InvalidConfig(format!("unknown fusion strategy `{other}`"))),
        }
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Qp => "qp",
            Strategy::Mirror => "mirror",
            Strategy::Softmax => "softmax",
            Strategy::Entropy => "entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: Strategy,
    /// `M`.
    pub validation_points: usize,
    pub concatenate: bool,
    pub mirror: MirrorConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mirror,
            validation_points: 1,
            concatenate: true,
            mirror: MirrorConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategy == Strategy::Qp && self.validation_points != 1 {
            return Err(Error::InvalidConfig("fusion.strategy = qp needs fusion.validation_points = 1".into()));
        }
        if self.mirror.iterations == 0 {
            return Err(Error::InvalidConfig("mirror descent needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    /// Fused test prediction.
    pub prediction: FusedPrediction,
    /// Surviving experts' predictions at the validation points.
    pub validation: Option<LocalPredictionSet>,
    /// Indices (into the input shards) of experts that took part.
    pub experts: Vec<usize>,
    /// Validation objective of the chosen weights, when one was optimized.
    pub objective: Option<f64>,
    /// No validation points were available, so uniform weights were used.
    pub uniform_fallback: bool,
}

/// Builds one expert per shard with hyperparameters `hp`, picks weights on the
/// validation points and fuses the test predictions. With `concatenate` set,
/// the validation points are appended to every shard before the test
/// posterior is computed; the weights are not recomputed.
pub fn predict_fused(
    hp: &HyperParams,
    shards: &[Shard],
    validation: &Points,
    test_times: &[f64],
    spec: &KernelSpec,
    opts: &GpOptions,
    cfg: &FusionConfig,
) -> Result<FusionOutcome> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::NoExperts);
    }
    if validation.times.len() != cfg.validation_points || validation.values.len() != cfg.validation_points {
        return Err(Error::DimensionMismatch(format!(
            "expected {} validation points, got {}",
            cfg.validation_points,
            validation.times.len()
        )));
    }
    let m = cfg.validation_points;
    let mut query = validation.times.clone();
    query.extend_from_slice(test_times);

    let first: Vec<Option<PosteriorPrediction>> = shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| {
            let r = LocalModel::new(shard.clone(), *hp, spec.clone(), opts).and_then(|model| model.predict(&query));
            r.map_err(|e| warn!("expert {i} dropped: {e}")).ok()
        })
        .collect();
    let experts: Vec<usize> = (0..shards.len()).filter(|&i| first[i].is_some()).collect();
    if experts.is_empty() {
        return Err(Error::NoExperts);
    }
    let all = LocalPredictionSet::from_predictions(&experts.iter().map(|&i| first[i].clone().expect("survivor")).collect::<Vec<_>>())?;
    let k = experts.len();
    let val_idx: Vec<usize> = (0..m).collect();
    let test_idx: Vec<usize> = (m..query.len()).collect();
    let val_set = all.select_points(&val_idx);

    let mut uniform_fallback = false;
    let mut objective_value = None;
    let weights: Option<FusionWeights> = match cfg.strategy {
        Strategy::Entropy => None,
        _ if m == 0 => {
            info!("no validation points; using uniform fusion weights");
            uniform_fallback = true;
            Some(FusionWeights::uniform(k))
        }
        Strategy::Qp => {
            let sol = solve_qp_single(&val_set, validation.values[0])?;
            objective_value = Some(sol.objective);
            Some(sol.weights)
        }
        Strategy::Mirror => {
            let res = mirror_descent(&val_set, &validation.values, &cfg.mirror)?;
            objective_value = Some(res.objective);
            Some(res.weights)
        }
        Strategy::Softmax => {
            let w = softmax_weights(&expert_rmse(&val_set, &validation.values)?)?;
            objective_value = Some(objective(&val_set, &validation.values, w.as_slice()));
            Some(w)
        }
    };

    let test_set = if cfg.concatenate && m > 0 {
        let second: Vec<Option<PosteriorPrediction>> = experts
            .par_iter()
            .map(|&i| {
                let r = shards[i]
                    .extended(&validation.times, &validation.values)
                    .and_then(|s| LocalModel::new(s, *hp, spec.clone(), opts))
                    .and_then(|model| model.predict(test_times));
                r.map_err(|e| warn!("expert {i} failed after adding validation points: {e}")).ok()
            })
            .collect();
        if second.iter().all(Option::is_some) {
            LocalPredictionSet::from_predictions(&second.into_iter().map(|p| p.expect("checked")).collect::<Vec<_>>())?
        } else {
            warn!("falling back to the non-concatenated test posterior");
            all.select_points(&test_idx)
        }
    } else {
        all.select_points(&test_idx)
    };

    let prediction = match weights {
        Some(w) => fuse(&test_set, &w)?,
        None => fuse_pointwise(&test_set, &entropy_weights(&test_set, prior_variance(hp, spec)))?,
    };
    Ok(FusionOutcome {
        prediction,
        validation: (m > 0).then_some(val_set),
        experts,
        objective: objective_value,
        uniform_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(mean: &[&[f64]], var: &[&[f64]]) -> LocalPredictionSet {
        LocalPredictionSet::new(mean.iter().map(|r| r.to_vec()).collect(), var.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn symmetric_average() {
        let l = set(&[&[2.0], &[4.0]], &[&[1.0], &[1.0]]);
        let f = fuse(&l, &FusionWeights::uniform(2)).unwrap();
        assert_relative_eq!(f.mean[0], 3.0);
        assert_relative_eq!(f.variance[0], 1.0);
    }

    #[test]
    fn unit_weight_selects_expert() {
        let l = set(&[&[2.0, 1.0], &[4.0, -1.0]], &[&[0.5, 2.0], &[3.0, 0.25]]);
        let f = fuse(&l, &FusionWeights::unit(2, 1)).unwrap();
        assert_eq!(f.mean, vec![4.0, -1.0]);
        assert_relative_eq!(f.variance[0], 3.0, epsilon = 1e-15);
        assert_relative_eq!(f.variance[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn tiny_variances_are_clamped() {
        let l = set(&[&[1.0]], &[&[0.0]]);
        assert_eq!(l.variance(0, 0), MIN_VARIANCE);
    }

    #[test]
    fn weights_validation() {
        assert!(FusionWeights::new(vec![]).is_err());
        assert!(FusionWeights::new(vec![0.0, 0.0]).is_err());
        assert!(FusionWeights::new(vec![-1.0, 2.0]).is_err());
        assert_eq!(FusionWeights::new(vec![1.0, 3.0]).unwrap().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn qp_examples() {
        let l = set(&[&[1.0], &[3.0]], &[&[1.0], &[1.0]]);
        let sol = solve_qp_single(&l, 2.0).unwrap();
        assert!(sol.objective < 1e-20);
        assert_relative_eq!(sol.weights.as_slice()[0], 0.5, epsilon = 1e-12);
        let r_sum: f64 = sol.r.iter().enumerate().map(|(i, r)| r * l.b(i, 0)).sum();
        assert_relative_eq!(r_sum, 1.0, epsilon = 1e-12);

        // expert 0 is exact
        let l = set(&[&[5.0], &[9.0]], &[&[4.0], &[0.1]]);
        assert!(solve_qp_single(&l, 5.0).unwrap().objective < 1e-20);

        // truth outside the hull: nearest expert only
        let l = set(&[&[1.0], &[3.0], &[2.0]], &[&[1.0], &[2.0], &[0.5]]);
        let sol = solve_qp_single(&l, 10.0).unwrap();
        assert_eq!(sol.weights.as_slice(), &[0.0, 1.0, 0.0]);
        assert_relative_eq!(sol.objective, 49.0);

        let l = set(&[&[7.0]], &[&[1.0]]);
        assert_eq!(solve_qp_single(&l, 0.0).unwrap().weights.as_slice(), &[1.0]);
    }

    #[test]
    fn qp_ties_prefer_uniform() {
        let l = set(&[&[2.0], &[2.0], &[2.0]], &[&[1.0], &[1.0], &[1.0]]);
        let sol = solve_qp_single(&l, 2.0).unwrap();
        for w in sol.weights.as_slice() {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mirror_step_example() {
        let b = mirror_step(&[0.5, 0.5], &[1.0, 0.0], 1.0);
        assert_relative_eq!(b[0], 0.268941421369995, epsilon = 1e-12);
        assert_relative_eq!(b[1], 0.731058578630005, epsilon = 1e-12);
        assert_eq!(mirror_step(&[0.2, 0.8], &[0.0, 0.0], 3.0), vec![0.2, 0.8]);
    }

    #[test]
    fn mirror_matches_qp_on_single_point() {
        let l = set(&[&[1.0], &[4.0], &[2.5]], &[&[0.4], &[1.2], &[0.9]]);
        let qp = solve_qp_single(&l, 3.3).unwrap();
        let md = mirror_descent(&l, &[3.3], &MirrorConfig::default()).unwrap();
        assert!(md.objective - qp.objective <= 1e-4);
        let mut best = f64::INFINITY;
        let running: Vec<f64> = md.trace.iter().map(|f| {
            best = best.min(*f);
            best
        }).collect();
        assert!(running.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*running.last().unwrap(), md.objective);
    }

    #[test]
    fn softmax_examples() {
        let w = softmax_weights(&[1.0, 1.0, 1.0]).unwrap();
        assert!(w.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = softmax_weights(&[0.0, 1e6]).unwrap();
        assert_relative_eq!(w.as_slice()[0], 1.0);
        let w = softmax_weights(&[0.1, 0.3]).unwrap();
        assert_relative_eq!(w.as_slice()[0], 0.549833997312478, epsilon = 1e-12);
        assert_relative_eq!(w.as_slice()[1], 0.450166002687522, epsilon = 1e-12);
    }

    #[test]
    fn entropy_prefers_confident_experts() {
        let l = set(&[&[0.0], &[0.0]], &[&[0.1], &[1.0]]);
        let w = &entropy_weights(&l, 2.0)[0];
        assert!(w.as_slice()[0] > w.as_slice()[1]);
        let l = set(&[&[0.0], &[0.0]], &[&[2.0], &[2.0]]);
        assert_eq!(entropy_weights(&l, 2.0)[0], FusionWeights::uniform(2));
    }

    #[test]
    fn validation_split() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let (train, val) = split_validation(&t, &t, 1).unwrap();
        assert_eq!(train.times.len(), 9);
        assert_eq!(val.times, vec![9.0]);
        let (train, val) = split_validation(&t, &t, 0).unwrap();
        assert_eq!(train.times.len(), 10);
        assert!(val.times.is_empty());
        let t: Vec<f64> = (1..=600).map(f64::from).collect();
        let (_, val) = split_validation(&t, &t, 3).unwrap();
        assert_eq!(val.times, vec![598.0, 599.0, 600.0]);
        assert!(split_validation(&t[..3], &t[..3], 3).is_err());
    }

    #[test]
    fn qp_needs_one_point() {
        let cfg = FusionConfig { strategy: Strategy::Qp, validation_points: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
