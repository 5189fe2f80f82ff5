//! Symmetric positive-definite pentadiagonal systems.
//!
//! Stores the three distinct bands of a symmetric matrix with bandwidth 2
//! and solves `A x = b` via a banded LDL^T factorization in O(n).

use crate::{Error, Result};

/// Symmetric matrix with nonzero diagonals at offsets 0, ±1, ±2.
#[derive(Debug, Clone)]
pub struct SymPentaMatrix {
    /// Main diagonal, length n.
    pub diag: Vec<f64>,
    /// First off-diagonal, length n-1.
    pub off1: Vec<f64>,
    /// Second off-diagonal, length n-2.
    pub off2: Vec<f64>,
}

impl SymPentaMatrix {
    pub fn new(diag: Vec<f64>, off1: Vec<f64>, off2: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n < 3 {
            return Err(Error::Invalid(format!(
                "system size {n} too small, need >= 3"
            )));
        }
        if off1.len() != n - 1 || off2.len() != n - 2 {
            return Err(Error::Shape(format!(
                "band lengths {}/{} do not match size {n}",
                off1.len(),
                off2.len()
            )));
        }
        Ok(SymPentaMatrix { diag, off1, off2 })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Banded matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i >= 1 {
                acc += self.off1[i - 1] * x[i - 1];
            }
            if i >= 2 {
                acc += self.off2[i - 2] * x[i - 2];
            }
            if i + 1 < n {
                acc += self.off1[i] * x[i + 1];
            }
            if i + 2 < n {
                acc += self.off2[i] * x[i + 2];
            }
            y[i] = acc;
        }
        y
    }

    /// Factors A = L D L^T with unit lower-triangular L of bandwidth 2.
    pub fn factor(&self) -> Result<SymPentaFactor> {
        let n = self.n();
        let mut d = vec![0.0; n];
        let mut a = vec![0.0; n]; // L[i, i-1], a[0] unused
        let mut b = vec![0.0; n]; // L[i, i-2], b[0..2] unused

        d[0] = self.diag[0];
        if d[0] <= 0.0 {
            return Err(Error::Invalid("matrix not positive definite".into()));
        }
        a[1] = self.off1[0] / d[0];
        d[1] = self.diag[1] - a[1] * a[1] * d[0];
        if d[1] <= 0.0 {
            return Err(Error::Invalid("matrix not positive definite".into()));
        }
        for i in 2..n {
            b[i] = self.off2[i - 2] / d[i - 2];
            a[i] = (self.off1[i - 1] - b[i] * a[i - 1] * d[i - 2]) / d[i - 1];
            d[i] = self.diag[i] - b[i] * b[i] * d[i - 2] - a[i] * a[i] * d[i - 1];
            if d[i] <= 0.0 {
                return Err(Error::Invalid("matrix not positive definite".into()));
            }
        }
        Ok(SymPentaFactor { d, a, b })
    }

    /// Solves A x = rhs with iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n() {
            return Err(Error::Shape(format!(
                "rhs length {} does not match system size {}",
                rhs.len(),
                self.n()
            )));
        }
        let factor = self.factor()?;
        let mut x = factor.solve(rhs);
        // Refinement knocks the forward error down to ~machine precision
        // even for the stiff smoothing systems (lambda up to 1e6); stop
        // once the correction no longer shrinks.
        let mut last_norm = f64::INFINITY;
        for _ in 0..4 {
            let residual = self.compensated_residual(&x, rhs);
            let correction = factor.solve(&residual);
            let norm = correction.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if !norm.is_finite() || norm >= last_norm {
                break;
            }
            for (xi, ci) in x.iter_mut().zip(&correction) {
                *xi += ci;
            }
            if norm == 0.0 {
                break;
            }
            last_norm = norm;
        }
        Ok(x)
    }

    /// rhs - A x with the row sums accumulated in double length via
    /// error-free transformations, so cancellation between the large
    /// smoothing terms (lambda up to 1e6) does not drown the true
    /// residual.
    fn compensated_residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = self.n();
        let two_sum = |a: f64, b: f64| -> (f64, f64) {
            let s = a + b;
            let bb = s - a;
            (s, (a - (s - bb)) + (b - bb))
        };
        (0..n)
            .map(|i| {
                let mut terms: Vec<(f64, f64)> = Vec::with_capacity(5);
                let mut push = |a: f64, b: f64| {
                    let p = a * b;
                    terms.push((p, a.mul_add(b, -p)));
                };
                push(self.diag[i], x[i]);
                if i >= 1 {
                    push(self.off1[i - 1], x[i - 1]);
                }
                if i + 1 < n {
                    push(self.off1[i], x[i + 1]);
                }
                if i >= 2 {
                    push(self.off2[i - 2], x[i - 2]);
                }
                if i + 2 < n {
                    push(self.off2[i], x[i + 2]);
                }
                let mut hi = 0.0;
                let mut lo = 0.0;
                for (p, e) in terms {
                    let (s, err) = two_sum(hi, p);
                    hi = s;
                    lo += err + e;
                }
                (rhs[i] - hi) - lo
            })
            .collect()
    }
}

/// LDL^T factor of a [`SymPentaMatrix`].
pub struct SymPentaFactor {
    d: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SymPentaFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut y = vec![0.0; n];
        y[0] = rhs[0];
        y[1] = rhs[1] - self.a[1] * y[0];
        for i in 2..n {
            y[i] = rhs[i] - self.a[i] * y[i - 1] - self.b[i] * y[i - 2];
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        let mut z = y;
        // z[n-1] already final
        z[n - 2] -= self.a[n - 1] * z[n - 1];
        for i in (0..n - 2).rev() {
            z[i] -= self.a[i + 1] * z[i + 1] + self.b[i + 2] * z[i + 2];
        }
        z
    }
}
