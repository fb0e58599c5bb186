//! Tridiagonal systems stored by diagonals, solved with the Thomas algorithm.

use crate::error::{Error, Result};

/// `sub[i] = A[i][i-1]` (`sub[0]` unused), `diag[i] = A[i][i]`,
/// `sup[i] = A[i][i+1]` (`sup[n-1]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self { sub: vec![0.0; n], diag: vec![0.0; n], sup: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut t = Self::zeros(n);
        t.diag.copy_from_slice(&self.diag);
        for i in 0..n.saturating_sub(1) {
            t.sup[i] = self.sub[i + 1];
            t.sub[i + 1] = self.sup[i];
        }
        t
    }

    /// Solve `A x = rhs` without pivoting. Intended for the diagonally dominant
    /// M-matrices produced by the discretizations here.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
        }
        if n == 0 {
            return Ok(vec![]);
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular(0));
        }
        c[0] = self.sup[0] / denom;
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.sub[i] * c[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::Singular(i));
            }
            c[i] = if i + 1 < n { self.sup[i] / denom } else { 0.0 };
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }

    /// Solve `A^T x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.transpose().solve(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tridiagonal {
        Tridiagonal {
            sub: vec![0.0, -1.0, -0.5, -2.0],
            diag: vec![4.0, 3.0, 5.0, 6.0],
            sup: vec![-1.5, -1.0, -2.0, 0.0],
        }
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = sample();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = a.apply(&x);
        let got = a.solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_solve() {
        let a = sample();
        let x = vec![0.25, 1.0, -1.0, 2.0];
        let b = a.transpose().apply(&x);
        let got = a.solve_transpose(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_and_mismatch() {
        let mut a = sample();
        a.diag[0] = 0.0;
        assert!(matches!(a.solve(&[1.0; 4]), Err(Error::Singular(0))));
        assert!(matches!(sample().solve(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_unknown() {
        let a = Tridiagonal { sub: vec![0.0], diag: vec![2.0], sup: vec![0.0] };
        assert_eq!(a.solve(&[3.0]).unwrap(), vec![1.5]);
    }
}
