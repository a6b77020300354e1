//! Shared fixtures for the benchmarks.

use excirec_core::localfield::{LocalFieldConfig, LocalFieldSystem};
use excirec_core::nearfield::{ScanConfig, TipScan};
use excirec_core::{build_geometry, AggregateGeometry, GeometryConfig};

pub fn chain(n: usize) -> AggregateGeometry {
    build_geometry(&GeometryConfig::chain(n)).expect("valid chain")
}

pub fn line_scan(geom: &AggregateGeometry, n_points: usize) -> TipScan {
    TipScan::build(&ScanConfig::line(n_points, 40.0, 2.0), geom).expect("valid scan")
}

/// The 20-site table chain in nm and Debye with the default tip.
pub fn table_system() -> LocalFieldSystem {
    let geom = build_geometry(&GeometryConfig::Chain {
        n: 20,
        spacing: 1.25,
        mu: 7.4,
        dipole_angle_deg: 0.0,
        dipoles: None,
    })
    .expect("valid chain");
    LocalFieldSystem::from_config(geom, &LocalFieldConfig::default()).expect("valid system")
}
