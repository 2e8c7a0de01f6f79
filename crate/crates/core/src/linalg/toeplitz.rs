//! Symmetric positive-definite Toeplitz systems in O(n²).
//!
//! The Durbin recursion on the first column yields the reflection
//! coefficients and the prediction-error variances `E_0..E_{n-1}`. From
//! them:
//!
//! * `log|T| = Σ log E_k`,
//! * Levinson's recursion solves `T·x = b` for any right-hand side,
//! * the last forward predictor gives the first column of `T⁻¹`, and the
//!   Gohberg–Semencul representation turns that column into the sums along
//!   every diagonal of `T⁻¹`. Those sums are what `Tr(T⁻¹·D)` needs when
//!   `D` is itself symmetric Toeplitz.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Recursion aborts once a prediction-error variance drops below this
/// fraction of the zero-lag entry.
pub const BREAKDOWN_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Durbin {
    reflection: Vec<f64>,
    errors: Vec<f64>,
    /// Order n-1 forward predictor, leading coefficient 1.
    predictor: Vec<f64>,
}

/// Implicit symmetric Toeplitz matrix given by its first column.
#[derive(Debug)]
pub struct ToeplitzOperator {
    column: Vec<f64>,
    durbin: OnceLock<std::result::Result<Durbin, (usize, f64)>>,
}

impl Clone for ToeplitzOperator {
    fn clone(&self) -> Self {
        let durbin = OnceLock::new();
        if let Some(d) = self.durbin.get() {
            let _ = durbin.set(d.clone());
        }
        Self {
            column: self.column.clone(),
            durbin,
        }
    }
}

impl ToeplitzOperator {
    pub fn new(column: Vec<f64>) -> Result<Self> {
        if column.is_empty() {
            return Err(Error::DimensionMismatch("Toeplitz column must be nonempty".into()));
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Toeplitz column contains non-finite values".into()));
        }
        Ok(Self {
            column,
            durbin: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.column.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column.is_empty()
    }

    pub fn column(&self) -> &[f64] {
        &self.column
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.column[i.abs_diff(j)])
    }

    /// `T·x` by direct O(n²) summation.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| (0..n).map(|j| self.column[i.abs_diff(j)] * x[j]).sum())
            .collect()
    }

    fn durbin(&self) -> Result<&Durbin> {
        self.durbin
            .get_or_init(|| run_durbin(&self.column))
            .as_ref()
            .map_err(|&(order, error)| Error::Breakdown { order, error })
    }

    /// Reflection coefficients `κ_1..κ_{n-1}`.
    pub fn reflection_coefficients(&self) -> Result<&[f64]> {
        Ok(&self.durbin()?.reflection)
    }

    /// Prediction-error variances `E_0..E_{n-1}`.
    pub fn prediction_errors(&self) -> Result<&[f64]> {
        Ok(&self.durbin()?.errors)
    }

    pub fn logdet(&self) -> Result<f64> {
        Ok(self.durbin()?.errors.iter().map(|e| e.ln()).sum())
    }

    /// Levinson solve of `T·x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("rhs has {} entries, matrix is {n}x{n}", b.len())));
        }
        let d = self.durbin()?;
        let t = &self.column;
        let mut x = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        a[0] = 1.0;
        x[0] = b[0] / t[0];
        for k in 1..n {
            let kappa = d.reflection[k - 1];
            scratch[..k].copy_from_slice(&a[..k]);
            for j in 1..k {
                a[j] += kappa * scratch[k - j];
            }
            a[k] = kappa;
            let mut eps = b[k];
            for j in 0..k {
                eps -= t[k - j] * x[j];
            }
            let scale = eps / d.errors[k];
            // backward vector is the reversed predictor
            for j in 0..=k {
                x[j] += scale * a[k - j];
            }
        }
        Ok(x)
    }

    /// First column of `T⁻¹`.
    pub fn inverse_first_column(&self) -> Result<Vec<f64>> {
        let d = self.durbin()?;
        let e = *d.errors.last().expect("nonempty");
        Ok(d.predictor.iter().map(|a| a / e).collect())
    }

    /// `s[k] = Σ_i (T⁻¹)[i][i+k]` for `k = 0..n-1`.
    pub fn inverse_diagonal_sums(&self) -> Result<Vec<f64>> {
        let x = self.inverse_first_column()?;
        let n = x.len();
        let x0 = x[0];
        let mut sums = vec![0.0; n];
        for (k, sum) in sums.iter_mut().enumerate() {
            // B[0][k] = x[k]; B[i][i+k] = B[i-1][i-1+k] + (x_i x_{i+k} - x_{n-i} x_{n-i-k}) / x_0
            let mut b = x[k];
            let mut acc = b;
            for i in 1..n - k {
                b += (x[i] * x[i + k] - x[n - i] * x[n - i - k]) / x0;
                acc += b;
            }
            *sum = acc;
        }
        Ok(sums)
    }

    /// Dense `T⁻¹` from the same recursion, O(n²).
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let x = self.inverse_first_column()?;
        let n = x.len();
        let x0 = x[0];
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut b = x[k];
            m[(0, k)] = b;
            m[(k, 0)] = b;
            for i in 1..n - k {
                b += (x[i] * x[i + k] - x[n - i] * x[n - i - k]) / x0;
                m[(i, i + k)] = b;
                m[(i + k, i)] = b;
            }
        }
        Ok(m)
    }
}

fn run_durbin(t: &[f64]) -> std::result::Result<Durbin, (usize, f64)> {
    let n = t.len();
    let floor = BREAKDOWN_TOL * t[0].abs();
    if !(t[0] > floor) {
        return Err((0, t[0]));
    }
    let mut errors = Vec::with_capacity(n);
    let mut reflection = Vec::with_capacity(n.saturating_sub(1));
    let mut a = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    a[0] = 1.0;
    let mut e = t[0];
    errors.push(e);
    for k in 1..n {
        let delta: f64 = (0..k).map(|j| a[j] * t[k - j]).sum();
        let kappa = -delta / e;
        scratch[..k].copy_from_slice(&a[..k]);
        for j in 1..k {
            a[j] += kappa * scratch[k - j];
        }
        a[k] = kappa;
        e *= 1.0 - kappa * kappa;
        if !(e > floor) || !e.is_finite() {
            return Err((k, e));
        }
        reflection.push(kappa);
        errors.push(e);
    }
    Ok(Durbin {
        reflection,
        errors,
        predictor: a,
    })
}

pub fn toeplitz_solve(t: &ToeplitzOperator, b: &[f64]) -> Result<Vec<f64>> {
    t.solve(b)
}

pub fn toeplitz_logdet(t: &ToeplitzOperator) -> Result<f64> {
    t.logdet()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::spd_factor;
    use approx::assert_relative_eq;

    fn ar1_column(n: usize, phi: f64) -> Vec<f64> {
        (0..n).map(|k| phi.powi(k as i32) + if k == 0 { 0.1 } else { 0.0 }).collect()
    }

    #[test]
    fn identity_and_diagonal() {
        let t = ToeplitzOperator::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.solve(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.logdet().unwrap(), 0.0);
        let t = ToeplitzOperator::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(t.solve(&[4.0, 6.0]).unwrap(), vec![2.0, 3.0]);
        let t = ToeplitzOperator::new(vec![4.0, 0.0]).unwrap();
        assert_relative_eq!(t.logdet().unwrap(), 2.0 * 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn breakdown_on_singular() {
        let t = ToeplitzOperator::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(t.solve(&[1.0, 1.0, 1.0]), Err(Error::Breakdown { order: 1, .. })));
        assert!(ToeplitzOperator::new(vec![]).is_err());
    }

    #[test]
    fn matches_dense_on_ar1() {
        let n = 40;
        let t = ToeplitzOperator::new(ar1_column(n, 0.8)).unwrap();
        let dense = t.materialize();
        let f = spd_factor(&dense).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = t.solve(&b).unwrap();
        let xd = f.solve(&b);
        for (a, e) in x.iter().zip(&xd) {
            assert_relative_eq!(a, e, epsilon = 1e-10);
        }
        assert_relative_eq!(t.logdet().unwrap(), f.logdet(), epsilon = 1e-10);
        let inv = f.inverse();
        let ti = t.inverse().unwrap();
        assert!((&inv - &ti).norm() < 1e-9);
        let sums = t.inverse_diagonal_sums().unwrap();
        for (k, s) in sums.iter().enumerate() {
            let oracle: f64 = (0..n - k).map(|i| inv[(i, i + k)]).sum();
            assert_relative_eq!(*s, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_element() {
        let t = ToeplitzOperator::new(vec![5.0]).unwrap();
        assert_eq!(t.solve(&[10.0]).unwrap(), vec![2.0]);
        assert_eq!(t.inverse_diagonal_sums().unwrap(), vec![0.2]);
    }

    #[test]
    fn cache_survives_clone() {
        let t = ToeplitzOperator::new(ar1_column(8, 0.5)).unwrap();
        let _ = t.logdet().unwrap();
        let c = t.clone();
        assert_eq!(c.reflection_coefficients().unwrap(), t.reflection_coefficients().unwrap());
        assert_eq!(c.prediction_errors().unwrap().len(), 8);
    }
}
