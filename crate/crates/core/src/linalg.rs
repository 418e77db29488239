//! Symmetric tridiagonal blocks. Hat-function stiffness and mass matrices
//! couple only neighbouring nodes, so every Hessian block is tridiagonal.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            diag: vec![1.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn from_parts(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1), "off-diagonal length");
        Self { diag, off }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymTridiagonal) {
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += alpha * b;
        }
        for (a, b) in self.off.iter_mut().zip(&other.off) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.diag.iter_mut().for_each(|v| *v *= alpha);
        self.off.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut s = self.clone();
        s.scale(alpha);
        s
    }

    pub fn is_finite(&self) -> bool {
        self.diag.iter().chain(&self.off).all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            y[i] = v;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.off[i]
            } else if j + 1 == i {
                self.off[j]
            } else {
                0.0
            }
        })
    }

    /// Solve `self · x = rhs` by a square-root-free tridiagonal Cholesky
    /// (`L D Lᵀ`). `None` when a pivot is not strictly positive, i.e. the
    /// block is not positive definite.
    pub fn cholesky_solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.dim();
        debug_assert_eq!(rhs.len(), n);
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut pivot = self.diag[i];
            if i > 0 {
                pivot -= l[i - 1] * self.off[i - 1];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            d[i] = pivot;
            if i + 1 < n {
                l[i] = self.off[i] / pivot;
            }
        }
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= l[i] * x[i + 1];
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_matches_dense_solve() {
        let t = SymTridiagonal::from_parts(vec![4.0, 5.0, 6.0, 3.0], vec![1.0, -2.0, 0.5]);
        let b = [1.0, 2.0, -1.0, 0.3];
        let x = t.cholesky_solve(&b).unwrap();
        let dense = t.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        for i in 0..4 {
            assert!((x[i] - dense[i]).abs() < 1e-13);
        }
        let back = t.matvec(&x);
        for i in 0..4 {
            assert!((back[i] - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_block_is_rejected() {
        let t = SymTridiagonal::from_parts(vec![1.0, -1.0], vec![0.0]);
        assert!(t.cholesky_solve(&[1.0, 1.0]).is_none());
        let t = SymTridiagonal::from_parts(vec![1.0, 1.0], vec![2.0]);
        assert!(t.cholesky_solve(&[1.0, 1.0]).is_none());
    }
}
