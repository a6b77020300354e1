use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Result;
use excirec_core::localfield::{peak_analysis, spatial_map, LocalFieldConfig, LocalFieldSystem, PeakConfig};
use excirec_core::nearfield::{ProjectionMatrix, ScanConfig, TipScan};
use excirec_core::neuralnet::eval::{pearson, predict};
use excirec_core::neuralnet::Checkpoint;
use excirec_core::{build_geometry, GeometryConfig};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError};
use crate::output::Out;

fn default_geometry() -> GeometryConfig {
    GeometryConfig::Chain {
        n: 20,
        spacing: 1.25,
        mu: 7.4,
        dipole_angle_deg: 0.0,
        dipoles: None,
    }
}

fn d_points() -> usize {
    512
}
fn d_length() -> f64 {
    50.0
}

/// Line scan in nm; height defaults to gap plus tip radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineScan {
    #[serde(default = "d_points")]
    pub n_points: usize,
    #[serde(default = "d_length")]
    pub length: f64,
    #[serde(default)]
    pub z_dip: Option<f64>,
}

impl Default for LineScan {
    fn default() -> Self {
        LineScan {
            n_points: d_points(),
            length: d_length(),
            z_dip: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalFieldRunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Positions in nm, dipoles in Debye.
    #[serde(default = "default_geometry")]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub system: LocalFieldConfig,
    #[serde(default)]
    pub scan: LineScan,
    #[serde(default)]
    pub peaks: PeakConfig,
    /// Network applied to every peak slice.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Only compute the map and integrated spectrum.
    #[serde(default)]
    pub map_only: bool,
}

#[derive(Debug, Serialize)]
struct PeakRow {
    omega: f64,
    height: f64,
    prominence: f64,
    state: usize,
    eigenfrequency: f64,
    shift: f64,
    pearson: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<LocalFieldRunConfig>(path)?;
    let cfg = &loaded.config;
    if cfg.checkpoint.is_none() && !cfg.map_only {
        return Err(ConfigError::at("/checkpoint", "required unless map_only is true").into());
    }
    cfg.peaks.validate().map_err(|e| ConfigError::at("/peaks", e.to_string()))?;
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;

    let geom = build_geometry(&cfg.geometry)?;
    let sys = LocalFieldSystem::from_config(geom.clone(), &cfg.system)?;
    let z = cfg.scan.z_dip.unwrap_or_else(|| cfg.system.z_dip());
    let scan = Arc::new(TipScan::build(
        &ScanConfig::line(cfg.scan.n_points, cfg.scan.length, z),
        &geom,
    )?);
    let omegas = cfg.peaks.frequency_grid(&sys)?;
    log::info!("{} frequencies x {} tip positions", omegas.len(), scan.len());

    let map = spatial_map(&sys, &scan, &omegas)?;
    out.write_with("map.csv", |w| map.write_csv(w))?;
    let pa = peak_analysis(&sys, scan.clone(), &omegas, &cfg.peaks)?;
    out.write_with("integrated.csv", |w| {
        writeln!(w, "omega,absorption")?;
        for (o, a) in pa.omegas.iter().zip(&pa.integrated) {
            writeln!(w, "{o},{a:e}")?;
        }
        Ok(())
    })?;
    println!("{} peaks", pa.slices.len());
    if cfg.map_only {
        return Ok(());
    }

    let net = Checkpoint::load(loaded.resolve(cfg.checkpoint.as_ref().expect("checked")))?.network;
    let es = sys.ideal_eigensystem()?;
    let proj = ProjectionMatrix::new(&geom, &scan)?;
    let mut rows = Vec::new();
    let mut preds = Vec::new();
    for s in &pa.slices {
        let (state, e) = es
            .energies
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - s.omega).abs().total_cmp(&(b.1 - s.omega).abs()))
            .map(|(i, e)| (i, *e))
            .expect("nonempty aggregate");
        let ideal = proj.spectrum(&es.coefficients[state])?;
        let r = pearson(&s.spectrum.values, &ideal)?;
        let p = predict(&net, &s.spectrum.values, Some(&es.coefficients[state]))?;
        rows.push(PeakRow {
            omega: s.omega,
            height: s.height,
            prominence: s.prominence,
            state,
            eigenfrequency: e,
            shift: s.omega - e,
            pearson: r,
            loss: p.loss,
        });
        preds.push(p.coefficients);
    }
    out.write_with("peaks.csv", |w| {
        writeln!(w, "omega,height,prominence,state,eigenfrequency,shift,pearson,loss")?;
        for r in &rows {
            writeln!(
                w,
                "{},{:e},{:e},{},{},{},{},{:e}",
                r.omega,
                r.height,
                r.prominence,
                r.state,
                r.eigenfrequency,
                r.shift,
                r.pearson,
                r.loss.unwrap_or(f64::NAN)
            )?;
        }
        Ok(())
    })?;
    out.write_with("slices.csv", |w| {
        write!(w, "x")?;
        for s in &pa.slices {
            write!(w, ",omega_{}", s.omega)?;
        }
        writeln!(w)?;
        for (i, p) in scan.positions.iter().enumerate() {
            write!(w, "{}", p[0])?;
            for s in &pa.slices {
                write!(w, ",{:e}", s.spectrum.values[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    out.write_with("predictions.csv", |w| {
        writeln!(w, "peak,site,coefficient,ideal")?;
        for (k, (c, r)) in preds.iter().zip(&rows).enumerate() {
            for (m, v) in c.iter().enumerate() {
                writeln!(w, "{k},{m},{v},{}", es.coefficients[r.state][m])?;
            }
        }
        Ok(())
    })?;
    out.write_json("peaks.json", &rows)?;
    for r in &rows {
        println!(
            "omega {:.2}: state {} shift {:+.3} pearson {:.4} loss {:.3e}",
            r.omega,
            r.state,
            r.shift,
            r.pearson,
            r.loss.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
