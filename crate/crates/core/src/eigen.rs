//! Dense symmetric eigensolver (cyclic Jacobi) and eigenvector sign convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;

/// Eigenvalues closer than this are reported as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    /// Ascending.
    pub energies: Vec<f64>,
    /// Row `l` holds the coefficients `c^(l)`, unit norm, canonical sign.
    pub coefficients: Vec<Vec<f64>>,
    /// Set when two eigenvalues are closer than [`DEGENERACY_TOL`]; the
    /// coefficient vectors inside such a subspace are not unique.
    pub degenerate: bool,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.energies.len()
    }

    /// `max_l || H c - E c ||_2`.
    pub fn max_residual(&self, h: &Hamiltonian) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for (e, c) in self.energies.iter().zip(&self.coefficients) {
            let mut acc = 0.0;
            for i in 0..n {
                let hc: f64 = (0..n).map(|j| h.get(i, j) * c[j]).sum();
                let r = hc - e * c[i];
                acc += r * r;
            }
            worst = worst.max(acc.sqrt());
        }
        worst
    }

    /// `max |C C^T - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let d: f64 = self.coefficients[a]
                    .iter()
                    .zip(&self.coefficients[b])
                    .map(|(x, y)| x * y)
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// Flips the global sign so the largest-magnitude entry is positive. Near-ties
/// go to the lowest index.
/// Ties go to the lowest index.
pub fn canonicalize_sign(c: &[f64]) -> Result<Vec<f64>> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite coefficient"));
    }
    let mut out = c.to_vec();
    match pivot_index(&out) {
        None => Err(Error::Domain("cannot canonicalize the zero vector".into())),
        Some(_) => {
            canonicalize_in_place(&mut out);
            Ok(out)
        }
    }
}

/// Relative slack under which two magnitudes count as tied; mirror-symmetric
/// aggregates produce exact ties that rounding would otherwise break at random.
const TIE_RTOL: f64 = 1e-9;

fn pivot_index(c: &[f64]) -> Option<usize> {
    let best_abs = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if best_abs == 0.0 {
        return None;
    }
    c.iter().position(|v| v.abs() >= best_abs * (1.0 - TIE_RTOL))
}

/// In-place sign canonicalization; returns whether the sign was flipped.
pub(crate) fn canonicalize_in_place(c: &mut [f64]) -> bool {
    match pivot_index(c) {
        Some(i) if c[i] < 0.0 => {
            c.iter_mut().for_each(|v| *v = -*v);
            true
        }
        _ => false,
    }
}

/// Diagonalizes a real symmetric matrix.
pub fn diagonalize(h: &Hamiltonian) -> Result<EigenSystem> {
    let n = h.n();
    if n == 0 {
        return Err(Error::input("empty matrix"));
    }
    let scale = h.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let asym = h.asymmetry();
    if asym > 1e-14 * scale.max(1.0) {
        return Err(Error::input(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
    }

    let (values, vectors) = jacobi(n, h.as_slice())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let energies: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let coefficients: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| {
            let mut c: Vec<f64> = (0..n).map(|i| vectors[i * n + k]).collect();
            canonicalize_in_place(&mut c);
            c
        })
        .collect();
    let degenerate = energies.windows(2).any(|w| (w[1] - w[0]).abs() < DEGENERACY_TOL);
    Ok(EigenSystem {
        energies,
        coefficients,
        degenerate,
    })
}

/// Cyclic Jacobi. Returns eigenvalues and the row-major eigenvector matrix
/// whose column `k` belongs to eigenvalue `k`.
fn jacobi(n: usize, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = input.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 1 || frob == 0.0 {
        return Ok(((0..n).map(|i| a[i * n + i]).collect(), v));
    }
    let tol = f64::EPSILON * frob;

    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            return Ok(((0..n).map(|i| a[i * n + i]).collect(), v));
        }
        // Skip tiny elements after the first sweeps (Rutishauser).
        let skip_below = if sweep < 3 { 0.0 } else { tol / (n as f64) };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= skip_below || apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numerical {
        message: "Jacobi eigensolver did not converge".into(),
        iterations: MAX_SWEEPS,
    })
}
