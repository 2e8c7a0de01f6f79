use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = C`.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    lower: DMatrix<f64>,
}

/// Cholesky factorization of a symmetric matrix. Only the lower triangle of
/// `c` is read.
pub fn spd_factor(c: &DMatrix<f64>) -> Result<SpdFactorization> {
    let n = c.nrows();
    if n != c.ncols() {
        return Err(Error::DimensionMismatch(format!("expected a square matrix, got {}x{}", n, c.ncols())));
    }
    let mut l = c.clone();
    {
        let data = l.as_mut_slice();
        // Left-looking column update: column j minus contributions of the
        // already finished columns k < j. Storage is column-major.
        for j in 0..n {
            let (done, rest) = data.split_at_mut(j * n);
            let col_j = &mut rest[..n];
            for k in 0..j {
                let col_k = &done[k * n..(k + 1) * n];
                let ljk = col_k[j];
                if ljk != 0.0 {
                    for (dst, &src) in col_j[j..].iter_mut().zip(&col_k[j..]) {
                        *dst -= ljk * src;
                    }
                }
            }
            let pivot = col_j[j];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, size: n });
            }
            let d = pivot.sqrt();
            col_j[j] = d;
            let inv = 1.0 / d;
            for v in &mut col_j[j + 1..] {
                *v *= inv;
            }
        }
    }
    l.fill_upper_triangle(0.0, 1);
    Ok(SpdFactorization { lower: l })
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `C·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length must match the factor");
        let l = self.lower.as_slice();
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            b[j] /= col[j];
            let xj = b[j];
            for (dst, &lij) in b[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *dst -= xj * lij;
            }
        }
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let dot: f64 = b[j + 1..].iter().zip(&col[j + 1..]).map(|(x, l)| x * l).sum();
            b[j] = (b[j] - dot) / col[j];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }

    /// Solves `C·X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side rows must match the factor");
        for col in x.as_mut_slice().chunks_mut(n) {
            self.solve_in_place(col);
        }
        x
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit `C⁻¹` via `L⁻ᵀ·L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let l = self.lower.as_slice();
        // Column i of L⁻¹ is zero above row i.
        let mut linv = vec![0.0; n * n];
        for i in 0..n {
            let col = &mut linv[i * n..(i + 1) * n];
            col[i] = 1.0;
            for j in i..n {
                let lcol = &l[j * n..(j + 1) * n];
                col[j] /= lcol[j];
                let xj = col[j];
                for (dst, &lij) in col[j + 1..].iter_mut().zip(&lcol[j + 1..]) {
                    *dst -= xj * lij;
                }
            }
        }
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let cj = &linv[j * n..(j + 1) * n];
            for i in 0..=j {
                let ci = &linv[i * n..(i + 1) * n];
                let v: f64 = ci[j..].iter().zip(&cj[j..]).map(|(a, b)| a * b).sum();
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

pub fn spd_solve(f: &SpdFactorization, b: &[f64]) -> Vec<f64> {
    f.solve(b)
}

pub fn spd_logdet(f: &SpdFactorization) -> f64 {
    f.logdet()
}
