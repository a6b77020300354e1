//! Coupled induced-dipole model of a polarizable tip sphere and broadened
//! molecular resonances.
//!
//! Units: lengths in nm, transition dipoles in Debye, frequencies in cm^-1.
//! Fields are in Debye/nm^3 with `1/(4 pi eps0)` absorbed, so polarizabilities
//! carry nm^3 and `P = alpha E` comes out in Debye. Particle 0 is the tip,
//! particles `1..=N` are the molecules.

mod map;
mod peaks;

pub use map::{integrated_spectrum, spatial_map, MapSolver, TipProjection};
pub use peaks::{extract_peak_slices, find_peaks, peak_analysis, Peak, PeakAnalysis, PeakConfig, PeakSlice};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{diagonalize, EigenSystem};
use crate::error::{Error, Result};
use crate::geometry::AggregateGeometry;
use crate::hamiltonian::{clean_hamiltonian, Hamiltonian};
use crate::linalg::{self, ComplexLu};
use crate::nearfield::hertz_field;
use crate::vec3::{self, Vec3};

/// Planck constant, J s.
const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light, cm/s.
const LIGHT_CM_S: f64 = 2.997_924_58e10;
/// One Debye in C m.
const DEBYE_C_M: f64 = 3.335_640_952e-30;
/// `1/(4 pi eps0)` in J m / C^2.
const COULOMB_K: f64 = 8.987_551_792_3e9;

/// Energy of `1 Debye^2 / (4 pi eps0 nm^3)` expressed in cm^-1.
pub fn debye2_per_nm3_in_wavenumbers() -> f64 {
    DEBYE_C_M * DEBYE_C_M * COULOMB_K / 1e-27 / (PLANCK * LIGHT_CM_S)
}

/// Converts an angular rate in s^-1 to cm^-1.
pub fn rate_to_wavenumbers(rate: f64) -> f64 {
    rate / (2.0 * std::f64::consts::PI * LIGHT_CM_S)
}

pub type C64 = Complex64;
pub type CVec3 = [C64; 3];
pub type Tensor3 = [[f64; 3]; 3];
pub type CTensor3 = [[C64; 3]; 3];

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn default_radius() -> f64 {
    2.5
}
fn default_eps_b() -> f64 {
    9.0
}
fn default_eps_env() -> f64 {
    1.0
}
fn default_omega_p() -> f64 {
    7.26e4
}
fn default_gamma_p() -> f64 {
    400.0
}
fn default_v_f() -> f64 {
    1.39e8
}

/// Metal sphere tip with a size-corrected Drude dielectric function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipModel {
    /// Sphere radius, nm.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_eps_b")]
    pub eps_b: f64,
    #[serde(default = "default_eps_env")]
    pub eps_env: f64,
    /// Plasma frequency, cm^-1.
    #[serde(default = "default_omega_p")]
    pub omega_p: f64,
    /// Ohmic damping, cm^-1.
    #[serde(default = "default_gamma_p")]
    pub gamma_p: f64,
    /// Fermi velocity, cm/s.
    #[serde(default = "default_v_f")]
    pub v_f: f64,
}

impl Default for TipModel {
    fn default() -> Self {
        TipModel {
            radius: default_radius(),
            eps_b: default_eps_b(),
            eps_env: default_eps_env(),
            omega_p: default_omega_p(),
            gamma_p: default_gamma_p(),
            v_f: default_v_f(),
        }
    }
}

impl TipModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config("tip radius must be > 0"));
        }
        if !(self.eps_env.is_finite() && self.eps_env > 0.0) {
            return Err(Error::config("eps_env must be > 0"));
        }
        Ok(())
    }

    /// Surface-scattering damping `v_F / a_r` in cm^-1.
    pub fn surface_damping(&self) -> f64 {
        rate_to_wavenumbers(self.v_f / (self.radius * 1e-7))
    }
}

/// `eps(w) = eps_b + wp^2/(w(w - i gp)) - wp^2/(w(w - i gp - i vF/a))`.
pub fn drude_epsilon(omega: f64, tip: &TipModel) -> Result<C64> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be > 0, got {omega}")));
    }
    let wp2 = c(tip.omega_p * tip.omega_p);
    let w = c(omega);
    let i = C64::i();
    let bulk = wp2 / (w * (w - i * tip.gamma_p));
    let sized = wp2 / (w * (w - i * (tip.gamma_p + tip.surface_damping())));
    Ok(c(tip.eps_b) + bulk - sized)
}

/// Isotropic sphere polarizability `-a^3 (eps - eps_env)/(eps + 2 eps_env)`,
/// returned as the scalar multiplying the identity (nm^3).
pub fn tip_polarizability_scalar(omega: f64, tip: &TipModel) -> Result<C64> {
    let eps = drude_epsilon(omega, tip)?;
    Ok(clausius_mossotti(eps, tip.eps_env, tip.radius, omega)?)
}

fn clausius_mossotti(eps: C64, eps_env: f64, radius: f64, omega: f64) -> Result<C64> {
    let den = eps + c(2.0 * eps_env);
    if den.norm() <= 1e-12 * (1.0 + eps.norm()) {
        return Err(Error::Singularity(format!(
            "tip plasmon pole (eps + 2 eps_env = 0) at omega = {omega} cm^-1"
        )));
    }
    Ok(-radius.powi(3) * (eps - c(eps_env)) / den)
}

pub fn tip_polarizability(omega: f64, tip: &TipModel) -> Result<CTensor3> {
    let a = tip_polarizability_scalar(omega, tip)?;
    let z = c(0.0);
    Ok([[a, z, z], [z, a, z], [z, z, a]])
}

fn default_omega_m() -> f64 {
    2.0e4
}
fn default_gamma_m() -> f64 {
    1.0
}

/// Two-level molecular transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MolecularResonance {
    /// Transition frequency, cm^-1.
    pub omega_m: f64,
    /// Damping, cm^-1.
    pub gamma_m: f64,
    /// Transition dipole, Debye.
    pub mu: Vec3,
}

/// `-(mu (x) mu) / (w - w_m + i g_m)`, converted to nm^3.
pub fn molecular_polarizability(omega: f64, res: &MolecularResonance) -> CTensor3 {
    let k = debye2_per_nm3_in_wavenumbers();
    let den = C64::new(omega - res.omega_m, res.gamma_m);
    let f = -k / den;
    let mut t = [[c(0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            t[a][b] = f * (res.mu[a] * res.mu[b]);
        }
    }
    t
}

/// `T = (I - 3 R^ (x) R^) / R^3` for the separation of two particles (nm^-3).
pub fn dipole_tensor(r_m: &Vec3, r_n: &Vec3) -> Result<Tensor3> {
    let r = vec3::sub(r_m, r_n);
    let d2 = vec3::dot(&r, &r);
    if d2 == 0.0 {
        return Err(Error::Singularity("coincident particles".into()));
    }
    let d = d2.sqrt();
    let inv3 = 1.0 / (d2 * d);
    let mut t = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let id = if a == b { 1.0 } else { 0.0 };
            t[a][b] = (id - 3.0 * r[a] * r[b] / d2) * inv3;
        }
    }
    Ok(t)
}

fn matvec(t: &Tensor3, v: &Vec3) -> Vec3 {
    [
        t[0][0] * v[0] + t[0][1] * v[1] + t[0][2] * v[2],
        t[1][0] * v[0] + t[1][1] * v[1] + t[1][2] * v[2],
        t[2][0] * v[0] + t[2][1] * v[1] + t[2][2] * v[2],
    ]
}

fn default_gap() -> f64 {
    1.25
}

/// Molecules plus tip. The Hertz dipole sits at the sphere center.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFieldSystem {
    /// Positions in nm, dipole magnitude in Debye.
    pub geometry: AggregateGeometry,
    /// `None` switches the tip polarizability off.
    pub tip: Option<TipModel>,
    pub resonances: Vec<MolecularResonance>,
}

/// Serializable description of a local-field system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalFieldConfig {
    #[serde(default = "default_omega_m")]
    pub omega_m: f64,
    #[serde(default = "default_gamma_m")]
    pub gamma_m: f64,
    #[serde(default)]
    pub tip: TipModel,
    /// Ignore the tip polarizability (ideal Hertz dipole only).
    #[serde(default)]
    pub disable_tip: bool,
    /// Tip-edge to sample distance, nm. The dipole height is `gap + radius`.
    #[serde(default = "default_gap")]
    pub gap: f64,
}

impl Default for LocalFieldConfig {
    fn default() -> Self {
        LocalFieldConfig {
            omega_m: default_omega_m(),
            gamma_m: default_gamma_m(),
            tip: TipModel::default(),
            disable_tip: false,
            gap: default_gap(),
        }
    }
}

impl LocalFieldConfig {
    pub fn z_dip(&self) -> f64 {
        self.gap + self.tip.radius
    }
}

impl LocalFieldSystem {
    /// Identical resonances on every site, dipoles taken from the geometry.
    pub fn uniform(
        geometry: AggregateGeometry,
        tip: Option<TipModel>,
        omega_m: f64,
        gamma_m: f64,
    ) -> Result<Self> {
        if !(gamma_m.is_finite() && gamma_m > 0.0) {
            return Err(Error::config("gamma_m must be > 0"));
        }
        if let Some(t) = &tip {
            t.validate()?;
        }
        let resonances = (0..geometry.len())
            .map(|m| MolecularResonance {
                omega_m,
                gamma_m,
                mu: geometry.dipole(m),
            })
            .collect();
        Ok(LocalFieldSystem {
            geometry,
            tip,
            resonances,
        })
    }

    pub fn from_config(geometry: AggregateGeometry, cfg: &LocalFieldConfig) -> Result<Self> {
        let tip = if cfg.disable_tip { None } else { Some(cfg.tip) };
        Self::uniform(geometry, tip, cfg.omega_m, cfg.gamma_m)
    }

    pub fn n(&self) -> usize {
        self.geometry.len()
    }

    fn check_tip_position(&self, r_dip: &Vec3) -> Result<()> {
        if let Some(t) = &self.tip {
            let (_, hi) = self.geometry.bounds();
            if r_dip[2] - t.radius < hi[2] {
                return Err(Error::input(format!(
                    "tip sphere (center z = {}, radius {}) intersects the aggregate plane",
                    r_dip[2], t.radius
                )));
            }
        }
        Ok(())
    }

    /// Exciton Hamiltonian of the molecules in cm^-1: site energies on the
    /// diagonal and dipole-dipole couplings off it.
    pub fn exciton_hamiltonian(&self) -> Hamiltonian {
        let k = debye2_per_nm3_in_wavenumbers();
        let n = self.n();
        let v = clean_hamiltonian(&self.geometry);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = if i == j {
                    self.resonances[i].omega_m
                } else {
                    k * v.get(i, j)
                };
            }
        }
        Hamiltonian::from_row_major(n, data).expect("square by construction")
    }

    /// Eigenfrequencies (cm^-1) and states of the broadening-free aggregate.
    pub fn ideal_eigensystem(&self) -> Result<EigenSystem> {
        diagonalize(&self.exciton_hamiltonian())
    }
}

/// Induced dipoles of all particles, index 0 the tip.
#[derive(Debug, Clone)]
pub struct InducedDipoles {
    pub dipoles: Vec<CVec3>,
    /// External fields at the particles (zero at the tip).
    pub external: Vec<Vec3>,
    pub relative_residual: f64,
}

impl InducedDipoles {
    /// `Im sum_m P_m . E_m^ext`.
    pub fn absorption(&self) -> f64 {
        self.dipoles
            .iter()
            .zip(&self.external)
            .map(|(p, e)| (p[0] * e[0] + p[1] * e[1] + p[2] * e[2]).im)
            .sum()
    }
}

/// Options for [`solve_induced_dipoles_with`], used by tests to switch the
/// inter-particle coupling off.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub couple: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { couple: true }
    }
}

/// Solves `P_m = alpha_m (E_m^ext - sum_{n != m} T_mn P_n)` for the tip and
/// all molecules (dimension `3 (N + 1)`).
pub fn solve_induced_dipoles(
    omega: f64,
    sys: &LocalFieldSystem,
    r_dip: &Vec3,
    d: &Vec3,
) -> Result<InducedDipoles> {
    solve_induced_dipoles_with(omega, sys, r_dip, d, SolveOptions::default())
}

pub fn solve_induced_dipoles_with(
    omega: f64,
    sys: &LocalFieldSystem,
    r_dip: &Vec3,
    d: &Vec3,
    opts: SolveOptions,
) -> Result<InducedDipoles> {
    sys.check_tip_position(r_dip)?;
    let n = sys.n() + 1;
    let dim = 3 * n;
    let mut positions = Vec::with_capacity(n);
    positions.push(*r_dip);
    positions.extend_from_slice(&sys.geometry.positions);

    let mut alphas: Vec<CTensor3> = Vec::with_capacity(n);
    alphas.push(match &sys.tip {
        Some(t) => tip_polarizability(omega, t)?,
        None => [[c(0.0); 3]; 3],
    });
    for r in &sys.resonances {
        alphas.push(molecular_polarizability(omega, r));
    }

    let mut external = vec![[0.0; 3]; n];
    for m in 1..n {
        external[m] = hertz_field(&positions[m], r_dip, d)?;
    }

    // (I + alpha_m T_mn) P = alpha_m E_m
    let mut a = vec![c(0.0); dim * dim];
    let mut b = vec![c(0.0); dim];
    for m in 0..n {
        for i in 0..3 {
            a[(3 * m + i) * dim + 3 * m + i] = c(1.0);
            b[3 * m + i] = (0..3).map(|j| alphas[m][i][j] * external[m][j]).sum();
        }
        if !opts.couple {
            continue;
        }
        for k in 0..n {
            if k == m {
                continue;
            }
            let t = dipole_tensor(&positions[m], &positions[k])?;
            for i in 0..3 {
                for j in 0..3 {
                    let v: C64 = (0..3).map(|l| alphas[m][i][l] * t[l][j]).sum();
                    a[(3 * m + i) * dim + 3 * k + j] += v;
                }
            }
        }
    }
    let lu = ComplexLu::factor(dim, a.clone())?;
    let x = lu.solve(&b);
    let relative_residual = linalg::relative_residual(dim, &a, &x, &b);
    if !(relative_residual < 1e-10) {
        return Err(Error::Numerical {
            message: format!(
                "induced-dipole solve residual {relative_residual:.3e} (pivot ratio {:.3e})",
                lu.pivot_ratio
            ),
            iterations: 1,
        });
    }
    let dipoles = (0..n).map(|m| [x[3 * m], x[3 * m + 1], x[3 * m + 2]]).collect();
    Ok(InducedDipoles {
        dipoles,
        external,
        relative_residual,
    })
}

/// `A(omega) = Im sum_m P_m . E_m^ext`.
pub fn absorption_at(omega: f64, sys: &LocalFieldSystem, r_dip: &Vec3, d: &Vec3) -> Result<f64> {
    Ok(solve_induced_dipoles(omega, sys, r_dip, d)?.absorption())
}

/// Per-tip-position data for the reduced solve: the molecules' dipoles are
/// fixed to their transition-dipole directions, leaving one complex
/// amplitude per molecule.
#[derive(Debug, Clone)]
pub(crate) struct TipSite {
    /// `g_m = mu_m . E_m^ext`.
    g: Vec<f64>,
    /// `b_m . b_n` with `b_m = T_m0 mu_m`, row-major.
    btb: Vec<f64>,
}

/// Frequency-independent part of the reduced solve.
#[derive(Debug, Clone)]
pub(crate) struct ReducedSystem {
    n: usize,
    k: f64,
    /// Off-diagonal couplings in cm^-1 (zero diagonal), row-major.
    coupling: Vec<f64>,
}

impl ReducedSystem {
    pub(crate) fn new(sys: &LocalFieldSystem) -> Self {
        let n = sys.n();
        let h = sys.exciton_hamiltonian();
        let mut coupling = h.as_slice().to_vec();
        for i in 0..n {
            coupling[i * n + i] = 0.0;
        }
        ReducedSystem {
            n,
            k: debye2_per_nm3_in_wavenumbers(),
            coupling,
        }
    }

    pub(crate) fn tip_site(&self, sys: &LocalFieldSystem, r_dip: &Vec3, d: &Vec3) -> Result<TipSite> {
        sys.check_tip_position(r_dip)?;
        let n = self.n;
        let mut g = Vec::with_capacity(n);
        let mut bs = Vec::with_capacity(n);
        for m in 0..n {
            let p = &sys.geometry.positions[m];
            let mu = sys.resonances[m].mu;
            g.push(vec3::dot(&mu, &hertz_field(p, r_dip, d)?));
            if sys.tip.is_some() {
                bs.push(matvec(&dipole_tensor(p, r_dip)?, &mu));
            }
        }
        let mut btb = vec![0.0; if sys.tip.is_some() { n * n } else { 0 }];
        if sys.tip.is_some() {
            for i in 0..n {
                for j in 0..n {
                    btb[i * n + j] = vec3::dot(&bs[i], &bs[j]);
                }
            }
        }
        Ok(TipSite { g, btb })
    }

    /// Absorption at one frequency for one tip position. `alpha_tip` is the
    /// isotropic tip polarizability (ignored when the site has no tip data).
    pub(crate) fn absorption(
        &self,
        omega: f64,
        sys: &LocalFieldSystem,
        alpha_tip: C64,
        site: &TipSite,
    ) -> Result<f64> {
        let n = self.n;
        let mut a = vec![c(0.0); n * n];
        for i in 0..n {
            let r = &sys.resonances[i];
            for j in 0..n {
                a[i * n + j] = c(-self.coupling[i * n + j]);
            }
            a[i * n + i] = C64::new(omega - r.omega_m, r.gamma_m);
        }
        if !site.btb.is_empty() {
            let f = alpha_tip * self.k;
            for (v, bb) in a.iter_mut().zip(&site.btb) {
                *v += f * *bb;
            }
        }
        let rhs: Vec<C64> = site.g.iter().map(|g| c(-self.k * g)).collect();
        let x = linalg::solve_complex(n, a, &rhs)?;
        Ok(x.iter().zip(&site.g).map(|(x, g)| (x * g).im).sum())
    }
}
