//! Hertzian-dipole excitation and tip-scan absorption spectra.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eigen::EigenSystem;
use crate::error::{Error, Result};
use crate::geometry::AggregateGeometry;
use crate::rng::{self, gaussian};
use crate::vec3::{self, Vec3};

fn default_z() -> f64 {
    2.0
}

fn default_moment() -> Vec3 {
    [0.0, 0.0, 1.0]
}

fn default_line_points() -> usize {
    512
}

fn default_line_length() -> f64 {
    40.0
}

fn default_grid_points() -> usize {
    256
}

fn default_margin() -> f64 {
    5.0
}

/// Scan window relative to the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanConfig {
    /// Points along x through the aggregate centroid, spanning `length`
    /// symmetrically about the centroid (endpoints included).
    Line {
        #[serde(default = "default_line_points")]
        n_points: usize,
        #[serde(default = "default_line_length")]
        length: f64,
        #[serde(default = "default_z")]
        z_dip: f64,
        #[serde(default = "default_moment")]
        dip_moment: Vec3,
    },
    /// `nx * ny` grid over the aggregate footprint extended by `margin` on
    /// every side. Index is `iy * nx + ix`.
    Grid {
        #[serde(default = "default_grid_points")]
        nx: usize,
        #[serde(default = "default_grid_points")]
        ny: usize,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_z")]
        z_dip: f64,
        #[serde(default = "default_moment")]
        dip_moment: Vec3,
    },
}

impl ScanConfig {
    /// 512 points over 40 lattice spacings at height 2.
    pub fn default_line() -> Self {
        ScanConfig::Line {
            n_points: default_line_points(),
            length: default_line_length(),
            z_dip: default_z(),
            dip_moment: default_moment(),
        }
    }

    pub fn line(n_points: usize, length: f64, z_dip: f64) -> Self {
        ScanConfig::Line {
            n_points,
            length,
            z_dip,
            dip_moment: default_moment(),
        }
    }

    pub fn default_grid() -> Self {
        ScanConfig::Grid {
            nx: default_grid_points(),
            ny: default_grid_points(),
            margin: default_margin(),
            z_dip: default_z(),
            dip_moment: default_moment(),
        }
    }

    pub fn n_points(&self) -> usize {
        match self {
            ScanConfig::Line { n_points, .. } => *n_points,
            ScanConfig::Grid { nx, ny, .. } => nx * ny,
        }
    }

    pub fn z_dip(&self) -> f64 {
        match self {
            ScanConfig::Line { z_dip, .. } | ScanConfig::Grid { z_dip, .. } => *z_dip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanShape {
    Line { n: usize },
    Grid { nx: usize, ny: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipScan {
    pub positions: Vec<Vec3>,
    pub z_dip: f64,
    pub dip_moment: Vec3,
    pub shape: ScanShape,
}

impl TipScan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn build(config: &ScanConfig, geometry: &AggregateGeometry) -> Result<TipScan> {
        match config {
            ScanConfig::Line {
                n_points,
                length,
                z_dip,
                dip_moment,
            } => {
                check_scan(*n_points, *z_dip, dip_moment)?;
                if !(length.is_finite() && *length >= 0.0) || (*n_points > 1 && *length == 0.0) {
                    return Err(Error::config("scan length must be finite and > 0"));
                }
                let c = geometry.centroid();
                let start = c[0] - length / 2.0;
                let step = if *n_points > 1 {
                    length / (*n_points - 1) as f64
                } else {
                    0.0
                };
                let positions = (0..*n_points)
                    .map(|i| {
                        // symmetric construction keeps mirrored points exact
                        let x = if 2 * i + 1 < *n_points {
                            start + i as f64 * step
                        } else {
                            c[0] + length / 2.0 - (*n_points - 1 - i) as f64 * step
                        };
                        [x, c[1], *z_dip]
                    })
                    .collect();
                Ok(TipScan {
                    positions,
                    z_dip: *z_dip,
                    dip_moment: *dip_moment,
                    shape: ScanShape::Line { n: *n_points },
                })
            }
            ScanConfig::Grid {
                nx,
                ny,
                margin,
                z_dip,
                dip_moment,
            } => {
                check_scan(nx * ny, *z_dip, dip_moment)?;
                if !(margin.is_finite() && *margin >= 0.0) {
                    return Err(Error::config("scan margin must be finite and >= 0"));
                }
                let (lo, hi) = geometry.bounds();
                let x0 = lo[0] - margin;
                let y0 = lo[1] - margin;
                let wx = hi[0] - lo[0] + 2.0 * margin;
                let wy = hi[1] - lo[1] + 2.0 * margin;
                let axis = |n: usize, w: f64, o: f64, i: usize| {
                    if n > 1 {
                        o + w * i as f64 / (n - 1) as f64
                    } else {
                        o + w / 2.0
                    }
                };
                let mut positions = Vec::with_capacity(nx * ny);
                for iy in 0..*ny {
                    for ix in 0..*nx {
                        positions.push([axis(*nx, wx, x0, ix), axis(*ny, wy, y0, iy), *z_dip]);
                    }
                }
                Ok(TipScan {
                    positions,
                    z_dip: *z_dip,
                    dip_moment: *dip_moment,
                    shape: ScanShape::Grid { nx: *nx, ny: *ny },
                })
            }
        }
    }
}

fn check_scan(n: usize, z: f64, d: &Vec3) -> Result<()> {
    if n == 0 {
        return Err(Error::config("scan needs at least one tip position"));
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::config(format!("z_dip must be > 0, got {z}")));
    }
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::config("dip_moment must be finite"));
    }
    Ok(())
}

/// Near-zone field of a point dipole `d` at `r_dip`, observed at `r_obs`.
pub fn hertz_field(r_obs: &Vec3, r_dip: &Vec3, d: &Vec3) -> Result<Vec3> {
    let r = vec3::sub(r_obs, r_dip);
    let r2 = vec3::dot(&r, &r);
    if r2 == 0.0 {
        return Err(Error::Singularity(
            "field evaluated at the dipole position".into(),
        ));
    }
    Ok(hertz_unchecked(&r, r2, d))
}

#[inline]
fn hertz_unchecked(r: &Vec3, r2: f64, d: &Vec3) -> Vec3 {
    let inv = 1.0 / r2.sqrt();
    let inv3 = inv * inv * inv;
    let inv5 = inv3 * inv * inv;
    let rd = vec3::dot(r, d);
    [
        3.0 * r[0] * rd * inv5 - d[0] * inv3,
        3.0 * r[1] * rd * inv5 - d[1] * inv3,
        3.0 * r[2] * rd * inv5 - d[2] * inv3,
    ]
}

/// `mu_m . E(R_m; r_dip)` for every site.
pub fn site_projections(geometry: &AggregateGeometry, r_dip: &Vec3, d: &Vec3) -> Result<Vec<f64>> {
    geometry
        .positions
        .iter()
        .enumerate()
        .map(|(m, p)| Ok(vec3::dot(&geometry.dipole(m), &hertz_field(p, r_dip, d)?)))
        .collect()
}

/// `A = |sum_m c_m mu_m . E(R_m; r_dip)|^2`.
pub fn absorption_strength(
    c: &[f64],
    geometry: &AggregateGeometry,
    r_dip: &Vec3,
    d: &Vec3,
) -> Result<f64> {
    if c.len() != geometry.len() {
        return Err(Error::input(format!(
            "coefficient vector has length {}, aggregate has {} sites",
            c.len(),
            geometry.len()
        )));
    }
    let proj = site_projections(geometry, r_dip, d)?;
    let amp: f64 = c.iter().zip(&proj).map(|(a, b)| a * b).sum();
    Ok(amp * amp)
}

/// Matrix `F[i][m] = mu_m . E(R_m; R_i)` over a scan, row-major
/// (`n_tip x n_sites`). Every eigenstate spectrum is `(F c)^2`.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    pub n_tip: usize,
    pub n_sites: usize,
    pub data: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn new(geometry: &AggregateGeometry, scan: &TipScan) -> Result<Self> {
        let n_sites = geometry.len();
        let mut data = Vec::with_capacity(scan.len() * n_sites);
        for r_dip in &scan.positions {
            data.extend(site_projections(geometry, r_dip, &scan.dip_moment)?);
        }
        Ok(ProjectionMatrix {
            n_tip: scan.len(),
            n_sites,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_sites..(i + 1) * self.n_sites]
    }

    /// Writes `(F c)_i^2` into `out`.
    pub fn spectrum_into(&self, c: &[f64], out: &mut [f64]) {
        debug_assert_eq!(c.len(), self.n_sites);
        for (i, o) in out.iter_mut().enumerate() {
            let amp: f64 = self.row(i).iter().zip(c).map(|(f, x)| f * x).sum();
            *o = amp * amp;
        }
    }

    pub fn spectrum(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.n_sites {
            return Err(Error::input(format!(
                "coefficient vector has length {}, expected {}",
                c.len(),
                self.n_sites
            )));
        }
        let mut out = vec![0.0; self.n_tip];
        self.spectrum_into(c, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub scan: Arc<TipScan>,
    pub state_index: Option<usize>,
    /// Relative noise level that has been applied (0 for clean spectra).
    pub noise_sigma: f64,
}

impl Spectrum {
    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    /// CSV with columns `x,y,z,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,z,value")?;
        for (p, v) in self.scan.positions.iter().zip(&self.values) {
            writeln!(w, "{},{},{},{}", p[0], p[1], p[2], v)?;
        }
        Ok(())
    }
}

pub fn scan_spectrum(c: &[f64], geometry: &AggregateGeometry, scan: Arc<TipScan>) -> Result<Spectrum> {
    let f = ProjectionMatrix::new(geometry, &scan)?;
    let values = f.spectrum(c)?;
    Ok(Spectrum {
        values,
        scan,
        state_index: None,
        noise_sigma: 0.0,
    })
}

/// Adds `N(0, (sigma_n * max A)^2)` to every value.
pub fn add_noise(s: &Spectrum, sigma_n: f64, seed: u64) -> Result<Spectrum> {
    if !(sigma_n.is_finite() && sigma_n >= 0.0) {
        return Err(Error::config(format!("noise sigma must be >= 0, got {sigma_n}")));
    }
    let mut out = s.clone();
    if sigma_n == 0.0 {
        return Ok(out);
    }
    add_noise_in_place(&mut out.values, sigma_n, &mut rng::rng_from_seed(seed));
    out.noise_sigma = sigma_n;
    Ok(out)
}

/// Relative Gaussian noise on a raw buffer; std is `sigma_n * max(values)`.
pub fn add_noise_in_place<T>(values: &mut [T], sigma_n: f64, rng: &mut rng::Rng)
where
    T: Copy + Into<f64> + FromF64,
{
    let max = values
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max((*v).into()));
    let std = sigma_n * max;
    for v in values.iter_mut() {
        *v = T::from_f64((*v).into() + std * gaussian(rng));
    }
}

pub trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// Lorentzian-dressed spatio-spectral map.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMap {
    pub omegas: Vec<f64>,
    pub n_tip: usize,
    /// Row-major `omegas.len() x n_tip`.
    pub values: Vec<f64>,
}

impl FrequencyMap {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_tip..(k + 1) * self.n_tip]
    }

    /// CSV with one row per frequency: `omega,v_0,...,v_{n_tip-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "omega")?;
        for i in 0..self.n_tip {
            write!(w, ",tip_{i}")?;
        }
        writeln!(w)?;
        for (k, om) in self.omegas.iter().enumerate() {
            write!(w, "{om}")?;
            for v in self.row(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Uniform grid over `[min E - 5 gamma, max E + 5 gamma]`.
pub fn default_frequency_grid(es: &EigenSystem, gamma: f64, n: usize) -> Vec<f64> {
    let lo = es.energies[0] - 5.0 * gamma;
    let hi = es.energies[es.n() - 1] + 5.0 * gamma;
    linspace(lo, hi, n)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `map(omega, i) = sum_l A^(l)(R_i) (gamma/pi) / ((omega - E_l)^2 + gamma^2)`.
pub fn frequency_map(
    es: &EigenSystem,
    geometry: &AggregateGeometry,
    scan: &TipScan,
    gamma: f64,
    omegas: &[f64],
) -> Result<FrequencyMap> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("gamma must be > 0, got {gamma}")));
    }
    let f = ProjectionMatrix::new(geometry, scan)?;
    let n_tip = scan.len();
    let spectra: Vec<Vec<f64>> = es
        .coefficients
        .iter()
        .map(|c| f.spectrum(c))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; omegas.len() * n_tip];
    for (k, om) in omegas.iter().enumerate() {
        let row = &mut values[k * n_tip..(k + 1) * n_tip];
        for (e, a) in es.energies.iter().zip(&spectra) {
            let w = gamma / std::f64::consts::PI / ((om - e) * (om - e) + gamma * gamma);
            for (r, v) in row.iter_mut().zip(a) {
                *r += w * v;
            }
        }
    }
    Ok(FrequencyMap {
        omegas: omegas.to_vec(),
        n_tip,
        values,
    })
}
