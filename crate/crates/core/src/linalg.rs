//! Small dense solvers used by the local-field and surrogate code.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// LU factorization with partial pivoting of a row-major complex matrix.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    /// Ratio of the largest to smallest pivot magnitude; a cheap lower bound
    /// for the condition number.
    pub pivot_ratio: f64,
}

impl ComplexLu {
    pub fn factor(n: usize, mut a: Vec<Complex64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pmax = 0.0f64;
        let mut pmin = f64::INFINITY;
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].norm();
            for i in (k + 1)..n {
                let v = a[i * n + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            pmax = pmax.max(best);
            pmin = pmin.min(best);
            if best == 0.0 || !best.is_finite() || best <= 1e-300 {
                return Err(Error::SingularSystem {
                    condition: f64::INFINITY,
                });
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let inv = a[k * n + k].inv();
            for i in (k + 1)..n {
                let f = a[i * n + k] * inv;
                a[i * n + k] = f;
                if f != Complex64::new(0.0, 0.0) {
                    for j in (k + 1)..n {
                        let u = a[k * n + j];
                        a[i * n + j] -= f * u;
                    }
                }
            }
        }
        let pivot_ratio = pmax / pmin;
        if pivot_ratio > 1e14 {
            return Err(Error::SingularSystem {
                condition: pivot_ratio,
            });
        }
        Ok(ComplexLu {
            n,
            lu: a,
            perm,
            pivot_ratio,
        })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// `A x = b` for a single right-hand side.
pub fn solve_complex(n: usize, a: Vec<Complex64>, b: &[Complex64]) -> Result<Vec<Complex64>> {
    Ok(ComplexLu::factor(n, a)?.solve(b))
}

/// Relative residual `||A x - b|| / ||b||`.
pub fn relative_residual(n: usize, a: &[Complex64], x: &[Complex64], b: &[Complex64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let mut s = Complex64::new(0.0, 0.0);
        for j in 0..n {
            s += a[i * n + j] * x[j];
        }
        num += (s - b[i]).norm_sqr();
        den += b[i].norm_sqr();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Cholesky factor `L` (row-major, lower) of a symmetric positive definite
/// matrix. Returns `None` if a pivot is not positive.
pub fn cholesky(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
pub fn forward_subst(n: usize, l: &[f64], b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = y` in place.
pub fn backward_subst_t(n: usize, l: &[f64], b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_lu_matches_known_solution() {
        let c = |r: f64, i: f64| Complex64::new(r, i);
        let a = vec![c(0.0, 1.0), c(2.0, 0.0), c(1.0, -1.0), c(3.0, 0.5)];
        let x = [c(1.0, 2.0), c(-0.5, 0.25)];
        let b = [a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]];
        let got = solve_complex(2, a.clone(), &b).unwrap();
        for k in 0..2 {
            assert!((got[k] - x[k]).norm() < 1e-14);
        }
        assert!(relative_residual(2, &a, &got, &b) < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let err = solve_complex(2, vec![one, one, one, one], &[one, z]).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }));
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(3, &a).unwrap();
        let mut b = [1.0, -2.0, 0.5];
        let orig = b;
        forward_subst(3, &l, &mut b);
        backward_subst_t(3, &l, &mut b);
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| a[i * 3 + j] * b[j]).sum();
            assert!((s - orig[i]).abs() < 1e-12);
        }
        assert!(cholesky(2, &[1.0, 2.0, 2.0, 1.0]).is_none());
    }
}
