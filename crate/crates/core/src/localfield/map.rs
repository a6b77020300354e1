//! Absorption over (frequency, tip position) grids.
//!
//! With the molecular dipoles pinned to their transition directions the
//! coupled problem reduces to `(M + K a_t B^T B) x = -K g` with
//! `M = (w + i g) I - H`. When all molecules share one damping, `M` is
//! diagonal in the exciton basis and the tip enters as a rank-3 update, so
//! each (frequency, tip) pair costs O(N) after a per-tip projection.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::{
    debye2_per_nm3_in_wavenumbers, dipole_tensor, matvec, tip_polarizability_scalar, LocalFieldSystem,
    ReducedSystem, TipSite,
};
use crate::error::{Error, Result};
use crate::nearfield::{hertz_field, FrequencyMap, TipScan};
use crate::vec3;

/// Frequency-independent precomputation shared by every tip position.
#[derive(Debug, Clone)]
pub struct MapSolver<'a> {
    sys: &'a LocalFieldSystem,
    k: f64,
    route: Route,
}

#[derive(Debug, Clone)]
enum Route {
    /// Uniform damping: exciton energies and states (row l = state l).
    Spectral {
        energies: Vec<f64>,
        states: Vec<Vec<f64>>,
        gamma: f64,
    },
    /// Site-dependent damping: one dense N x N solve per point.
    Dense(ReducedSystem),
}

/// Per-tip data in whichever basis the route uses.
#[derive(Debug, Clone)]
pub struct TipProjection {
    inner: ProjInner,
}

#[derive(Debug, Clone)]
enum ProjInner {
    Spectral {
        /// `g~_l = sum_m U_lm mu_m . E_m`.
        g: Vec<f64>,
        /// `B~_al = sum_m U_lm (T_m0 mu_m)_a`, stored as `[a][l]`; empty without a tip.
        b: Vec<[f64; 3]>,
    },
    Dense(TipSite),
}

impl<'a> MapSolver<'a> {
    pub fn new(sys: &'a LocalFieldSystem) -> Result<Self> {
        if sys.n() == 0 {
            return Err(Error::input("empty aggregate"));
        }
        let g0 = sys.resonances[0].gamma_m;
        let uniform = sys.resonances.iter().all(|r| r.gamma_m == g0);
        let route = if uniform {
            let es = sys.ideal_eigensystem()?;
            Route::Spectral {
                energies: es.energies,
                states: es.coefficients,
                gamma: g0,
            }
        } else {
            Route::Dense(ReducedSystem::new(sys))
        };
        Ok(MapSolver {
            sys,
            k: debye2_per_nm3_in_wavenumbers(),
            route,
        })
    }

    pub fn project(&self, r_dip: &vec3::Vec3, d: &vec3::Vec3) -> Result<TipProjection> {
        let sys = self.sys;
        match &self.route {
            Route::Dense(red) => Ok(TipProjection {
                inner: ProjInner::Dense(red.tip_site(sys, r_dip, d)?),
            }),
            Route::Spectral { states, .. } => {
                sys.check_tip_position(r_dip)?;
                let n = sys.n();
                let mut gs = Vec::with_capacity(n);
                let mut bs = Vec::with_capacity(n);
                for m in 0..n {
                    let p = &sys.geometry.positions[m];
                    let mu = sys.resonances[m].mu;
                    gs.push(vec3::dot(&mu, &hertz_field(p, r_dip, d)?));
                    if sys.tip.is_some() {
                        bs.push(matvec(&dipole_tensor(p, r_dip)?, &mu));
                    }
                }
                let g = states
                    .iter()
                    .map(|u| u.iter().zip(&gs).map(|(a, b)| a * b).sum())
                    .collect();
                let b = if bs.is_empty() {
                    Vec::new()
                } else {
                    states
                        .iter()
                        .map(|u| {
                            let mut acc = [0.0; 3];
                            for (um, bm) in u.iter().zip(&bs) {
                                for a in 0..3 {
                                    acc[a] += um * bm[a];
                                }
                            }
                            acc
                        })
                        .collect()
                };
                Ok(TipProjection {
                    inner: ProjInner::Spectral { g, b },
                })
            }
        }
    }

    /// Tip polarizability (scalar) at `omega`, zero without a tip.
    pub fn alpha_tip(&self, omega: f64) -> Result<C64> {
        match &self.sys.tip {
            Some(t) => tip_polarizability_scalar(omega, t),
            None => Ok(C64::new(0.0, 0.0)),
        }
    }

    /// Absorption for one tip projection at one frequency.
    pub fn absorption(&self, omega: f64, alpha_tip: C64, proj: &TipProjection) -> Result<f64> {
        match (&self.route, &proj.inner) {
            (Route::Dense(red), ProjInner::Dense(site)) => red.absorption(omega, self.sys, alpha_tip, site),
            (Route::Spectral { energies, gamma, .. }, ProjInner::Spectral { g, b }) => {
                let mut ggg = C64::new(0.0, 0.0);
                let mut h = [C64::new(0.0, 0.0); 3];
                let mut w = [[C64::new(0.0, 0.0); 3]; 3];
                let with_tip = !b.is_empty();
                for (l, e) in energies.iter().enumerate() {
                    let dl = C64::new(omega - e, *gamma).inv();
                    let gl = g[l];
                    ggg += dl * (gl * gl);
                    if with_tip {
                        let bl = b[l];
                        for a in 0..3 {
                            h[a] += dl * (bl[a] * gl);
                            for c in a..3 {
                                w[a][c] += dl * (bl[a] * bl[c]);
                            }
                        }
                    }
                }
                let mut total = ggg;
                if with_tip {
                    // Woodbury: subtract aK h^T (I + aK W)^-1 h
                    let f = alpha_tip * self.k;
                    let mut s = [[C64::new(0.0, 0.0); 3]; 3];
                    for a in 0..3 {
                        for c in 0..3 {
                            let wac = if c >= a { w[a][c] } else { w[c][a] };
                            s[a][c] = f * wac;
                        }
                        s[a][a] += 1.0;
                    }
                    let y = solve3(&s, &h)?;
                    let corr: C64 = (0..3).map(|a| h[a] * y[a]).sum();
                    total -= f * corr;
                }
                Ok(-self.k * total.im)
            }
            _ => unreachable!("projection built by a different solver"),
        }
    }
}

fn solve3(a: &[[C64; 3]; 3], b: &[C64; 3]) -> Result<[C64; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if !(det.norm() > 1e-300) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let mut x = [C64::new(0.0, 0.0); 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut m = *a;
        for r in 0..3 {
            m[r][col] = b[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *xc = d / det;
    }
    Ok(x)
}

fn projections(solver: &MapSolver, scan: &TipScan) -> Result<Vec<TipProjection>> {
    scan.positions
        .par_iter()
        .map(|p| solver.project(p, &scan.dip_moment))
        .collect()
}

/// Full map `A(omega_k, R_i)`, row-major over frequencies.
pub fn spatial_map(sys: &LocalFieldSystem, scan: &TipScan, omegas: &[f64]) -> Result<FrequencyMap> {
    let solver = MapSolver::new(sys)?;
    let projs = projections(&solver, scan)?;
    let rows: Vec<Vec<f64>> = omegas
        .par_iter()
        .map(|&w| {
            let at = solver.alpha_tip(w)?;
            projs.iter().map(|p| solver.absorption(w, at, p)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(FrequencyMap {
        omegas: omegas.to_vec(),
        n_tip: scan.len(),
        values: rows.concat(),
    })
}

/// Spatially integrated spectrum `sum_i A(omega_k, R_i)`.
pub fn integrated_spectrum(sys: &LocalFieldSystem, scan: &TipScan, omegas: &[f64]) -> Result<Vec<f64>> {
    let solver = MapSolver::new(sys)?;
    let projs = projections(&solver, scan)?;
    integrated_with(&solver, &projs, omegas)
}

pub(crate) fn integrated_with(solver: &MapSolver, projs: &[TipProjection], omegas: &[f64]) -> Result<Vec<f64>> {
    omegas
        .par_iter()
        .map(|&w| {
            let at = solver.alpha_tip(w)?;
            let mut s = 0.0;
            for p in projs {
                s += solver.absorption(w, at, p)?;
            }
            Ok(s)
        })
        .collect()
}

pub(crate) fn slice_with(solver: &MapSolver, projs: &[TipProjection], omega: f64) -> Result<Vec<f64>> {
    let at = solver.alpha_tip(omega)?;
    projs.par_iter().map(|p| solver.absorption(omega, at, p)).collect()
}

pub(crate) fn prepare<'a>(sys: &'a LocalFieldSystem, scan: &Arc<TipScan>) -> Result<(MapSolver<'a>, Vec<TipProjection>)> {
    let solver = MapSolver::new(sys)?;
    let projs = projections(&solver, scan)?;
    Ok((solver, projs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometryConfig};
    use crate::localfield::{absorption_at, MolecularResonance, TipModel};
    use crate::nearfield::ScanConfig;

    fn chain_nm(n: usize) -> crate::geometry::AggregateGeometry {
        build_geometry(&GeometryConfig::Chain {
            n,
            spacing: 1.25,
            mu: 7.4,
            dipole_angle_deg: 0.0,
            dipoles: None,
        })
        .unwrap()
    }

    #[test]
    fn spectral_route_matches_full_solve() {
        for tip in [None, Some(TipModel::default())] {
            let sys = LocalFieldSystem::uniform(chain_nm(6), tip, 2e4, 1.5).unwrap();
            let scan = TipScan::build(&ScanConfig::line(7, 10.0, 3.75), &sys.geometry).unwrap();
            let omegas = [2e4 - 290.0, 2e4 - 120.3, 2e4 + 7.0, 2e4 + 160.0];
            let map = spatial_map(&sys, &scan, &omegas).unwrap();
            for (k, w) in omegas.iter().enumerate() {
                for (i, p) in scan.positions.iter().enumerate() {
                    let full = absorption_at(*w, &sys, p, &scan.dip_moment).unwrap();
                    let got = map.row(k)[i];
                    assert!((full - got).abs() <= 1e-8 * full.abs().max(1e-12), "{full} vs {got}");
                }
            }
        }
    }

    #[test]
    fn dense_route_used_for_mixed_damping() {
        let mut sys = LocalFieldSystem::uniform(chain_nm(4), Some(TipModel::default()), 2e4, 1.0).unwrap();
        sys.resonances[2] = MolecularResonance {
            gamma_m: 4.0,
            ..sys.resonances[2]
        };
        let scan = TipScan::build(&ScanConfig::line(5, 8.0, 3.75), &sys.geometry).unwrap();
        let omegas = [2e4 - 200.0, 2e4 + 50.0];
        let map = spatial_map(&sys, &scan, &omegas).unwrap();
        for (k, w) in omegas.iter().enumerate() {
            for (i, p) in scan.positions.iter().enumerate() {
                let full = absorption_at(*w, &sys, p, &scan.dip_moment).unwrap();
                assert!((full - map.row(k)[i]).abs() <= 1e-8 * full.abs());
            }
        }
    }

    #[test]
    fn passive_absorption_is_nonnegative() {
        let sys = LocalFieldSystem::uniform(chain_nm(8), Some(TipModel::default()), 2e4, 2.0).unwrap();
        let scan = TipScan::build(&ScanConfig::line(33, 20.0, 3.75), &sys.geometry).unwrap();
        let omegas = crate::nearfield::linspace(2e4 - 400.0, 2e4 + 400.0, 301);
        let map = spatial_map(&sys, &scan, &omegas).unwrap();
        let max = map.values.iter().fold(0.0f64, |m, v| m.max(*v));
        assert!(map.values.iter().all(|v| *v >= -1e-12 * max));
    }

    #[test]
    fn integrated_equals_row_sums() {
        let sys = LocalFieldSystem::uniform(chain_nm(3), Some(TipModel::default()), 2e4, 1.0).unwrap();
        let scan = TipScan::build(&ScanConfig::line(9, 8.0, 3.75), &sys.geometry).unwrap();
        let omegas = [2e4 - 100.0, 2e4, 2e4 + 60.0];
        let map = spatial_map(&sys, &scan, &omegas).unwrap();
        let tot = integrated_spectrum(&sys, &scan, &omegas).unwrap();
        for k in 0..3 {
            let s: f64 = map.row(k).iter().sum();
            assert!((s - tot[k]).abs() <= 1e-12 * s.abs());
        }
    }
}
