//! Limited-memory BFGS with a backtracking (Armijo) line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm drops below this.
    pub grad_tol: f64,
    /// Stop once an accepted step changes the objective by less than this
    /// fraction of its magnitude.
    pub f_tol: f64,
    pub memory: usize,
    pub max_backtracks: usize,
    /// Largest allowed change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-5,
            f_tol: 1e7 * f64::EPSILON,
            memory: 10,
            max_backtracks: 40,
            max_step: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimStatus {
    Converged,
    MaxIterations,
    /// No decrease could be found along either the quasi-Newton or the
    /// steepest-descent direction; the objective is flat at working precision.
    Stalled,
    /// The starting point could not be evaluated.
    Failed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl OptimResult {
    pub fn grad_norm(&self) -> f64 {
        norm(&self.grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which returns the value and gradient or `None` when the
/// point cannot be evaluated (treated as +∞ by the line search).
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> OptimResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let dim = x0.len();
    let mut evaluations = 1;
    let Some((mut fx, mut g)) = f(x0).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite())) else {
        return OptimResult {
            x: x0.to_vec(),
            value: f64::INFINITY,
            grad: vec![f64::NAN; dim],
            iterations: 0,
            evaluations,
            status: OptimStatus::Failed,
            trace: vec![],
        };
    };
    let mut x = x0.to_vec();
    let mut trace = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;

    if dim == 0 {
        return OptimResult {
            x,
            value: fx,
            grad: g,
            iterations,
            evaluations,
            status: OptimStatus::Converged,
            trace,
        };
    }

    let status = loop {
        if norm(&g) <= cfg.grad_tol {
            break OptimStatus::Converged;
        }
        if iterations >= cfg.max_iter {
            break OptimStatus::MaxIterations;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let steepest = attempt == 1 || s_hist.is_empty();
            let mut d = if steepest {
                g.iter().map(|v| -v).collect::<Vec<_>>()
            } else {
                two_loop(&g, &s_hist, &y_hist)
            };
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut t = if steepest && s_hist.is_empty() { 1.0 / dmax.max(1.0) } else { 1.0 };
            if t * dmax > cfg.max_step {
                t = cfg.max_step / dmax;
            }
            for _ in 0..cfg.max_backtracks {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                evaluations += 1;
                if let Some((fv, gv)) = f(&xn) {
                    if fv.is_finite() && gv.iter().all(|v| v.is_finite()) && fv <= fx + 1e-4 * t * slope {
                        accepted = Some((xn, fv, gv));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            if steepest {
                break;
            }
        }

        let Some((xn, fv, gv)) = accepted else {
            break OptimStatus::Stalled;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gv.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 * norm(&s) * norm(&yv) {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        let decrease = fx - fv;
        x = xn;
        g = gv;
        trace.push(fv);
        iterations += 1;
        let stalled = decrease <= cfg.f_tol * fx.abs().max(fv.abs()).max(1.0);
        fx = fv;
        if stalled {
            break OptimStatus::Converged;
        }
    };

    OptimResult {
        x,
        value: fx,
        grad: g,
        iterations,
        evaluations,
        status,
        trace,
    }
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alpha[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    let last = m - 1;
    let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
    for v in &mut q {
        *v *= gamma;
    }
    for i in 0..m {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter().map(|v| -v).collect()
}
