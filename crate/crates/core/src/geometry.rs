//! Aggregate geometries: monomer positions and transition-dipole orientations.
//!
//! Lengths are in units of the lattice spacing unless the caller works in
//! physical units (the local-field module uses nm and Debye with the same
//! type). Aggregates lie in the x-y plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

fn one() -> f64 {
    1.0
}

fn default_theta() -> f64 {
    45.0
}

/// Geometry description as it appears in JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    /// Linear chain along x. Dipoles default to the chain axis.
    Chain {
        n: usize,
        #[serde(default = "one")]
        spacing: f64,
        #[serde(default = "one")]
        mu: f64,
        /// In-plane dipole angle from the chain axis, degrees.
        #[serde(default)]
        dipole_angle_deg: f64,
        /// Per-site dipole directions; normalized on construction.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dipoles: Option<Vec<Vec3>>,
    },
    /// Rectangular nx x ny array. Site index is `iy * nx + ix`.
    /// Dipoles alternate between +theta and -theta from one column to the next.
    Array2d {
        nx: usize,
        ny: usize,
        #[serde(default = "one")]
        spacing_x: f64,
        #[serde(default = "one")]
        spacing_y: f64,
        #[serde(default = "one")]
        mu: f64,
        #[serde(default = "default_theta")]
        theta_deg: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dipoles: Option<Vec<Vec3>>,
    },
}

impl GeometryConfig {
    pub fn chain(n: usize) -> Self {
        GeometryConfig::Chain {
            n,
            spacing: 1.0,
            mu: 1.0,
            dipole_angle_deg: 0.0,
            dipoles: None,
        }
    }

    pub fn array2d(nx: usize, ny: usize) -> Self {
        GeometryConfig::Array2d {
            nx,
            ny,
            spacing_x: 1.0,
            spacing_y: 1.0,
            mu: 1.0,
            theta_deg: default_theta(),
            dipoles: None,
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            GeometryConfig::Chain { n, .. } => *n,
            GeometryConfig::Array2d { nx, ny, .. } => nx * ny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeometryKind {
    Chain1D { n: usize, spacing: f64 },
    Array2D {
        nx: usize,
        ny: usize,
        spacing_x: f64,
        spacing_y: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateGeometry {
    pub positions: Vec<Vec3>,
    /// Unit vectors; the magnitude is `mu`.
    pub dipoles: Vec<Vec3>,
    pub mu: f64,
    pub kind: GeometryKind,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
    }
    Ok(())
}

fn unit_dipoles(raw: &[Vec3], n: usize) -> Result<Vec<Vec3>> {
    if raw.len() != n {
        return Err(Error::config(format!(
            "expected {n} dipole vectors, got {}",
            raw.len()
        )));
    }
    raw.iter()
        .enumerate()
        .map(|(i, d)| {
            let len = vec3::norm(d);
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::config(format!("dipole {i} has zero or invalid length")));
            }
            Ok(vec3::scale(d, 1.0 / len))
        })
        .collect()
}

pub fn build_geometry(config: &GeometryConfig) -> Result<AggregateGeometry> {
    match config {
        GeometryConfig::Chain {
            n,
            spacing,
            mu,
            dipole_angle_deg,
            dipoles,
        } => {
            if *n == 0 {
                return Err(Error::config("chain needs at least one site"));
            }
            check_positive("spacing", *spacing)?;
            check_positive("mu", *mu)?;
            let positions = (0..*n).map(|i| [i as f64 * spacing, 0.0, 0.0]).collect();
            let dipoles = match dipoles {
                Some(d) => unit_dipoles(d, *n)?,
                None => {
                    let t = dipole_angle_deg.to_radians();
                    vec![[t.cos(), t.sin(), 0.0]; *n]
                }
            };
            Ok(AggregateGeometry {
                positions,
                dipoles,
                mu: *mu,
                kind: GeometryKind::Chain1D {
                    n: *n,
                    spacing: *spacing,
                },
            })
        }
        GeometryConfig::Array2d {
            nx,
            ny,
            spacing_x,
            spacing_y,
            mu,
            theta_deg,
            dipoles,
        } => {
            if *nx == 0 || *ny == 0 {
                return Err(Error::config("array needs nx, ny >= 1"));
            }
            check_positive("spacing_x", *spacing_x)?;
            check_positive("spacing_y", *spacing_y)?;
            check_positive("mu", *mu)?;
            let n = nx * ny;
            let mut positions = Vec::with_capacity(n);
            let mut pattern = Vec::with_capacity(n);
            let t = theta_deg.to_radians();
            for iy in 0..*ny {
                for ix in 0..*nx {
                    positions.push([ix as f64 * spacing_x, iy as f64 * spacing_y, 0.0]);
                    let a = if ix % 2 == 0 { t } else { -t };
                    pattern.push([a.cos(), a.sin(), 0.0]);
                }
            }
            let dipoles = match dipoles {
                Some(d) => unit_dipoles(d, n)?,
                None => pattern,
            };
            Ok(AggregateGeometry {
                positions,
                dipoles,
                mu: *mu,
                kind: GeometryKind::Array2D {
                    nx: *nx,
                    ny: *ny,
                    spacing_x: *spacing_x,
                    spacing_y: *spacing_y,
                },
            })
        }
    }
}

impl AggregateGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Transition dipole vector of site `m` including its magnitude.
    pub fn dipole(&self, m: usize) -> Vec3 {
        vec3::scale(&self.dipoles[m], self.mu)
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.len() as f64;
        let s = self
            .positions
            .iter()
            .fold([0.0; 3], |acc, p| vec3::add(&acc, p));
        vec3::scale(&s, 1.0 / n)
    }

    /// Axis-aligned bounding box `(min, max)` of the positions.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Same lattice with every length multiplied by `factor` and the dipole
    /// magnitude replaced.
    pub fn rescaled(&self, factor: f64, mu: f64) -> AggregateGeometry {
        let kind = match self.kind {
            GeometryKind::Chain1D { n, spacing } => GeometryKind::Chain1D {
                n,
                spacing: spacing * factor,
            },
            GeometryKind::Array2D {
                nx,
                ny,
                spacing_x,
                spacing_y,
            } => GeometryKind::Array2D {
                nx,
                ny,
                spacing_x: spacing_x * factor,
                spacing_y: spacing_y * factor,
            },
        };
        AggregateGeometry {
            positions: self.positions.iter().map(|p| vec3::scale(p, factor)).collect(),
            dipoles: self.dipoles.clone(),
            mu,
            kind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_site_chain() {
        let g = build_geometry(&GeometryConfig::chain(3)).unwrap();
        assert_eq!(g.positions, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(g.dipoles.iter().all(|d| *d == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn twenty_site_chain_spans_19() {
        let g = build_geometry(&GeometryConfig::chain(20)).unwrap();
        assert_eq!(g.len(), 20);
        let (lo, hi) = g.bounds();
        assert_eq!(hi[0] - lo[0], 19.0);
        assert!(g.positions.iter().all(|p| p[1] == 0.0 && p[2] == 0.0));
    }

    #[test]
    fn ten_by_five_array() {
        let g = build_geometry(&GeometryConfig::array2d(10, 5)).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g.positions[10], [0.0, 1.0, 0.0]);
        assert_eq!(g.positions[49], [9.0, 4.0, 0.0]);
        // alternating columns
        assert!(g.dipoles[0][1] > 0.0 && g.dipoles[1][1] < 0.0);
        for d in &g.dipoles {
            assert!((vec3::norm(d) - 1.0).abs() < 1e-12);
        }
        // all positions distinct
        for i in 0..g.len() {
            for j in 0..i {
                assert_ne!(g.positions[i], g.positions[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_spacing() {
        for s in [0.0, -1.0, f64::NAN] {
            let cfg = GeometryConfig::Chain {
                n: 4,
                spacing: s,
                mu: 1.0,
                dipole_angle_deg: 0.0,
                dipoles: None,
            };
            assert!(matches!(build_geometry(&cfg), Err(Error::InvalidConfig(_))));
        }
        assert!(build_geometry(&GeometryConfig::chain(0)).is_err());
    }

    #[test]
    fn dipole_override_is_normalized() {
        let cfg = GeometryConfig::Chain {
            n: 2,
            spacing: 1.0,
            mu: 2.0,
            dipole_angle_deg: 0.0,
            dipoles: Some(vec![[0.0, 3.0, 0.0], [4.0, 3.0, 0.0]]),
        };
        let g = build_geometry(&cfg).unwrap();
        assert_eq!(g.dipoles[0], [0.0, 1.0, 0.0]);
        let d = g.dipole(1);
        assert!((d[0] - 1.6).abs() < 1e-15 && (d[1] - 1.2).abs() < 1e-15 && d[2] == 0.0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: GeometryConfig = serde_json::from_str(r#"{"kind":"chain","n":5}"#).unwrap();
        assert_eq!(ok, GeometryConfig::chain(5));
        let bad = serde_json::from_str::<GeometryConfig>(r#"{"kind":"chain","n":5,"foo":1}"#);
        assert!(bad.is_err());
    }
}
