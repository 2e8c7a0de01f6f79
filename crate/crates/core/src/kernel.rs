//! Composite stationary covariance for hourly traffic: a weekly periodic
//! term, a daily periodic term and a squared-exponential term for the
//! slowly varying deviations, together with analytic hyperparameter
//! derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of hyperparameters, including the noise variance.
pub const NUM_HYPER: usize = 7;

/// Index of one hyperparameter inside [`HyperParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hyper {
    SigmaP1,
    SigmaP2,
    SigmaLt,
    LenP1,
    LenP2,
    LenLt,
    Noise,
}

impl Hyper {
    pub const ALL: [Hyper; NUM_HYPER] = [
        Hyper::SigmaP1,
        Hyper::SigmaP2,
        Hyper::SigmaLt,
        Hyper::LenP1,
        Hyper::LenP2,
        Hyper::LenLt,
        Hyper::Noise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::InvalidHyperIndex(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            Hyper::SigmaP1 => "sigma2_p1",
            Hyper::SigmaP2 => "sigma2_p2",
            Hyper::SigmaLt => "sigma2_lt",
            Hyper::LenP1 => "l2_p1",
            Hyper::LenP2 => "l2_p2",
            Hyper::LenLt => "l2_lt",
            Hyper::Noise => "sigma2_e",
        }
    }

    /// Kernel term this parameter belongs to; `None` for the noise variance.
    pub fn term(self) -> Option<Term> {
        match self {
            Hyper::SigmaP1 | Hyper::LenP1 => Some(Term::Weekly),
            Hyper::SigmaP2 | Hyper::LenP2 => Some(Term::Daily),
            Hyper::SigmaLt | Hyper::LenLt => Some(Term::Se),
            Hyper::Noise => None,
        }
    }
}

/// Kernel variances, squared length-scales and the observation noise
/// variance, all stored in the raw positive domain.
///
/// Optimizers work on the log view (`to_log`/`from_log`) so positivity never
/// has to be enforced explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma2_p1: f64,
    pub sigma2_p2: f64,
    pub sigma2_lt: f64,
    pub l2_p1: f64,
    pub l2_p2: f64,
    pub l2_lt: f64,
    pub sigma2_e: f64,
}

impl HyperParams {
    pub fn new(values: [f64; NUM_HYPER]) -> Result<Self> {
        let hp = Self::from_array_unchecked(values);
        hp.validate()?;
        Ok(hp)
    }

    fn from_array_unchecked(v: [f64; NUM_HYPER]) -> Self {
        Self {
            sigma2_p1: v[0],
            sigma2_p2: v[1],
            sigma2_lt: v[2],
            l2_p1: v[3],
            l2_p2: v[4],
            l2_lt: v[5],
            sigma2_e: v[6],
        }
    }

    /// Every value set to one.
    pub fn unit() -> Self {
        Self::from_array_unchecked([1.0; NUM_HYPER])
    }

    pub fn validate(&self) -> Result<()> {
        for h in Hyper::ALL {
            let v = self.get(h);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHyperParams(format!(
                    "{} must be finite and strictly positive, got {v}",
                    h.name()
                )));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; NUM_HYPER] {
        [
            self.sigma2_p1,
            self.sigma2_p2,
            self.sigma2_lt,
            self.l2_p1,
            self.l2_p2,
            self.l2_lt,
            self.sigma2_e,
        ]
    }

    pub fn get(&self, h: Hyper) -> f64 {
        self.to_array()[h.index()]
    }

    pub fn set(&mut self, h: Hyper, value: f64) {
        let mut a = self.to_array();
        a[h.index()] = value;
        *self = Self::from_array_unchecked(a);
    }

    pub fn to_log(&self) -> [f64; NUM_HYPER] {
        self.to_array().map(f64::ln)
    }

    pub fn from_log(log: [f64; NUM_HYPER]) -> Self {
        Self::from_array_unchecked(log.map(f64::exp))
    }

    /// Log values of the listed parameters, in order.
    pub fn log_subset(&self, which: &[Hyper]) -> Vec<f64> {
        which.iter().map(|&h| self.get(h).ln()).collect()
    }

    /// Copy of `self` with the listed parameters replaced by `exp(log_values)`.
    pub fn with_log_subset(&self, which: &[Hyper], log_values: &[f64]) -> Self {
        let mut out = *self;
        for (&h, &v) in which.iter().zip(log_values) {
            out.set(h, v.exp());
        }
        out
    }
}

/// One elementary term of the composite kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Weekly,
    Daily,
    Se,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Weekly => "weekly",
            Term::Daily => "daily",
            Term::Se => "se",
        }
    }

    /// The (variance, squared length-scale) pair owned by this term.
    pub fn params(self) -> [Hyper; 2] {
        match self {
            Term::Weekly => [Hyper::SigmaP1, Hyper::LenP1],
            Term::Daily => [Hyper::SigmaP2, Hyper::LenP2],
            Term::Se => [Hyper::SigmaLt, Hyper::LenLt],
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "weekly" => Ok(Term::Weekly),
            "daily" => Ok(Term::Daily),
            "se" => Ok(Term::Se),
            other => Err(Error::InvalidKernelSpec(format!("unknown kernel term `{other}`"))),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Periods of the two periodic terms (in samples) and the set of active terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    weekly: bool,
    daily: bool,
    se: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            lambda1: 168.0,
            lambda2: 24.0,
            weekly: true,
            daily: true,
            se: true,
        }
    }
}

impl KernelSpec {
    pub fn new(lambda1: f64, lambda2: f64, terms: &[Term]) -> Result<Self> {
        let spec = Self {
            lambda1,
            lambda2,
            weekly: terms.contains(&Term::Weekly),
            daily: terms.contains(&Term::Daily),
            se: terms.contains(&Term::Se),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2 > 0.0 && self.lambda1 > self.lambda2 && self.lambda1.is_finite()) {
            return Err(Error::InvalidKernelSpec(format!(
                "periods must satisfy lambda1 > lambda2 > 0 (got {} and {})",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.weekly || self.daily || self.se) {
            return Err(Error::InvalidKernelSpec("at least one term must be active".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, term: Term) -> bool {
        match term {
            Term::Weekly => self.weekly,
            Term::Daily => self.daily,
            Term::Se => self.se,
        }
    }

    pub fn terms(&self) -> Vec<Term> {
        [Term::Weekly, Term::Daily, Term::Se]
            .into_iter()
            .filter(|&t| self.is_active(t))
            .collect()
    }

    /// Kernel hyperparameters that are trained: the two parameters of every
    /// active term. The noise variance is held fixed.
    pub fn free_params(&self) -> Vec<Hyper> {
        self.terms().into_iter().flat_map(Term::params).collect()
    }
}

fn periodic(tau: f64, period: f64, sigma2: f64, l2: f64) -> f64 {
    let s = (PI * tau / period).sin();
    sigma2 * (-(s * s) / l2).exp()
}

/// Weekly periodic term.
pub fn eval_k1(tau: f64, hp: &HyperParams, spec: &KernelSpec) -> f64 {
    periodic(tau, spec.lambda1, hp.sigma2_p1, hp.l2_p1)
}

/// Daily periodic term.
pub fn eval_k2(tau: f64, hp: &HyperParams, spec: &KernelSpec) -> f64 {
    periodic(tau, spec.lambda2, hp.sigma2_p2, hp.l2_p2)
}

/// Squared-exponential term.
pub fn eval_k3(tau: f64, hp: &HyperParams) -> f64 {
    hp.sigma2_lt * (-(tau * tau) / (2.0 * hp.l2_lt)).exp()
}

/// Sum of the active terms at lag `tau`.
pub fn eval_composite(tau: f64, hp: &HyperParams, spec: &KernelSpec) -> f64 {
    let mut k = 0.0;
    if spec.weekly {
        k += eval_k1(tau, hp, spec);
    }
    if spec.daily {
        k += eval_k2(tau, hp, spec);
    }
    if spec.se {
        k += eval_k3(tau, hp);
    }
    k
}

/// Prior variance `k(0)` of the latent function.
pub fn prior_variance(hp: &HyperParams, spec: &KernelSpec) -> f64 {
    eval_composite(0.0, hp, spec)
}

/// Domain in which a derivative is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// ∂/∂θ for the raw positive value θ.
    Raw,
    /// ∂/∂log θ, i.e. the raw derivative multiplied by θ.
    Log,
}

/// Derivative of `k(tau) + σ²_e·[tau == 0]` with respect to one parameter.
pub fn eval_grad(tau: f64, hp: &HyperParams, spec: &KernelSpec, which: Hyper, domain: Domain) -> f64 {
    let raw = match which {
        Hyper::Noise => {
            if tau == 0.0 {
                1.0
            } else {
                0.0
            }
        }
        _ if !spec.is_active(which.term().expect("kernel parameter")) => 0.0,
        Hyper::SigmaP1 => eval_k1(tau, hp, spec) / hp.sigma2_p1,
        Hyper::SigmaP2 => eval_k2(tau, hp, spec) / hp.sigma2_p2,
        Hyper::SigmaLt => eval_k3(tau, hp) / hp.sigma2_lt,
        Hyper::LenP1 => {
            let s = (PI * tau / spec.lambda1).sin();
            eval_k1(tau, hp, spec) * s * s / (hp.l2_p1 * hp.l2_p1)
        }
        Hyper::LenP2 => {
            let s = (PI * tau / spec.lambda2).sin();
            eval_k2(tau, hp, spec) * s * s / (hp.l2_p2 * hp.l2_p2)
        }
        Hyper::LenLt => eval_k3(tau, hp) * tau * tau / (2.0 * hp.l2_lt * hp.l2_lt),
    };
    match domain {
        Domain::Raw => raw,
        Domain::Log => raw * hp.get(which),
    }
}

/// Cross-covariance matrix `K[i][j] = k(a[i] - b[j])`.
pub fn kernel_matrix(times_a: &[f64], times_b: &[f64], hp: &HyperParams, spec: &KernelSpec) -> DMatrix<f64> {
    DMatrix::from_fn(times_a.len(), times_b.len(), |i, j| {
        eval_composite(times_a[i] - times_b[j], hp, spec)
    })
}

/// Elementwise derivative of `C = K(t, t) + σ²_e·I` with respect to `which`
/// (an index into [`Hyper::ALL`]), in the requested domain.
pub fn kernel_matrix_grad(
    times: &[f64],
    hp: &HyperParams,
    spec: &KernelSpec,
    which: usize,
    domain: Domain,
) -> Result<DMatrix<f64>> {
    let h = Hyper::from_index(which)?;
    let n = times.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = eval_grad(times[i] - times[j], hp, spec, h, domain);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// True when consecutive sample indices are equally spaced.
pub fn is_regular_grid(times: &[f64]) -> bool {
    if times.len() < 2 {
        return true;
    }
    let step = times[1] - times[0];
    step > 0.0 && times.windows(2).all(|w| w[1] - w[0] == step)
}
