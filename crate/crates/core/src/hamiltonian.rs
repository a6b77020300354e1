//! Frenkel exciton Hamiltonian in the single-excitation manifold.
//!
//! Natural units: lattice spacing 1, dipole magnitude 1, `1/(4 pi eps0) = 1`.
//! Energies are therefore in units of `mu^2 / (4 pi eps0 a^3)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AggregateGeometry;
use crate::rng::{self, gaussian};
use crate::vec3;

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    n: usize,
    data: Vec<f64>,
}

impl Hamiltonian {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::input("matrix is not square"));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(n, data)
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::input(format!(
                "expected {} entries for {n}x{n}, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Hamiltonian { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|H_ij - H_ji|` over the matrix.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Transition dipole-dipole coupling `V_mn`.
pub fn coupling(geometry: &AggregateGeometry, m: usize, n: usize) -> Result<f64> {
    let len = geometry.len();
    if m >= len || n >= len {
        return Err(Error::input(format!("site index out of range (n = {len})")));
    }
    if m == n {
        return Err(Error::Domain(format!("coupling of site {m} with itself")));
    }
    Ok(coupling_unchecked(geometry, m, n, 0.0))
}

/// Bracket `[mu_m . mu_n - 3 (mu_m . u)(mu_n . u)] + extra`, divided by `R^3`.
fn coupling_unchecked(geometry: &AggregateGeometry, m: usize, n: usize, extra: f64) -> f64 {
    // Order the pair so that V_mn and V_nm are computed identically.
    let (a, b) = if m < n { (m, n) } else { (n, m) };
    let r = vec3::sub(&geometry.positions[b], &geometry.positions[a]);
    let dist = vec3::norm(&r);
    let u = vec3::scale(&r, 1.0 / dist);
    let ma = geometry.dipole(a);
    let mb = geometry.dipole(b);
    let bracket = vec3::dot(&ma, &mb) - 3.0 * vec3::dot(&ma, &u) * vec3::dot(&mb, &u);
    (bracket + extra) / (dist * dist * dist)
}

/// `max_{m != n} |V_mn|` of the disorder-free aggregate. Zero for a monomer.
pub fn max_coupling(geometry: &AggregateGeometry) -> f64 {
    let n = geometry.len();
    let mut best = 0.0f64;
    for m in 0..n {
        for k in (m + 1)..n {
            best = best.max(coupling_unchecked(geometry, m, k, 0.0).abs());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    /// Site-energy disorder, in units of the maximal clean coupling.
    #[serde(default)]
    pub sigma_d: f64,
    /// Coupling disorder, same units.
    #[serde(default)]
    pub sigma_od: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DisorderSpec {
    pub fn clean() -> Self {
        DisorderSpec {
            sigma_d: 0.0,
            sigma_od: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_d", self.sigma_d), ("sigma_od", self.sigma_od)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One draw of static disorder.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderRealization {
    /// Site-energy shifts `delta eps_m`.
    pub site: Vec<f64>,
    /// Symmetric coupling-bracket perturbations `delta V_mn`, row-major,
    /// zero diagonal. Applied inside the bracket, i.e. divided by `R^3`.
    pub coupling: Vec<f64>,
}

impl DisorderRealization {
    pub fn zeros(n: usize) -> Self {
        DisorderRealization {
            site: vec![0.0; n],
            coupling: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.site.len()
    }
}

/// Draws `delta eps_m ~ N(0, (sigma_d Vmax)^2)` and symmetric
/// `delta V_mn ~ N(0, (sigma_od Vmax)^2)`.
pub fn sample_disorder(spec: &DisorderSpec, geometry: &AggregateGeometry) -> Result<DisorderRealization> {
    spec.validate()?;
    let n = geometry.len();
    let mut out = DisorderRealization::zeros(n);
    if spec.sigma_d == 0.0 && spec.sigma_od == 0.0 {
        return Ok(out);
    }
    let vmax = max_coupling(geometry);
    let mut rng = rng::rng_from_seed(spec.seed);
    let sd = spec.sigma_d * vmax;
    if sd > 0.0 {
        for v in out.site.iter_mut() {
            *v = sd * gaussian(&mut rng);
        }
    }
    let sod = spec.sigma_od * vmax;
    if sod > 0.0 {
        for m in 0..n {
            for k in (m + 1)..n {
                let d = sod * gaussian(&mut rng);
                out.coupling[m * n + k] = d;
                out.coupling[k * n + m] = d;
            }
        }
    }
    Ok(out)
}

/// `H_mm = site_energy + delta eps_m`, `H_mn = V_mn + delta V_mn / R_mn^3`.
pub fn build_hamiltonian(
    geometry: &AggregateGeometry,
    disorder: &DisorderRealization,
    site_energy: f64,
) -> Result<Hamiltonian> {
    let n = geometry.len();
    if disorder.n() != n || disorder.coupling.len() != n * n {
        return Err(Error::input(format!(
            "disorder realization has dimension {}, geometry has {n} sites",
            disorder.n()
        )));
    }
    let mut data = vec![0.0; n * n];
    for m in 0..n {
        data[m * n + m] = site_energy + disorder.site[m];
        for k in (m + 1)..n {
            let v = coupling_unchecked(geometry, m, k, disorder.coupling[m * n + k]);
            data[m * n + k] = v;
            data[k * n + m] = v;
        }
    }
    Ok(Hamiltonian { n, data })
}

/// Disorder-free Hamiltonian with zero site energies.
pub fn clean_hamiltonian(geometry: &AggregateGeometry) -> Hamiltonian {
    build_hamiltonian(geometry, &DisorderRealization::zeros(geometry.len()), 0.0)
        .expect("dimensions match by construction")
}
