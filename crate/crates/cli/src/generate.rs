use std::path::{Path, PathBuf};

use anyhow::Result;
use excirec_core::dataset::{clean_eigenstates, generate_ensemble, DataSet, EnsembleConfig, Manifest, Tranche};
use excirec_core::nearfield::TipScan;
use excirec_core::{build_geometry, rng};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError};
use crate::output::Out;

pub const ENSEMBLE_FILE: &str = "ensemble.exds";
pub const CLEAN_FILE: &str = "clean.exds";

/// Held-out ensemble generated with the same geometry and scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    pub name: String,
    pub tranches: Vec<Tranche>,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub test_sets: Vec<TestSet>,
    /// Also write the disorder-free eigenstate spectra.
    #[serde(default = "yes")]
    pub clean_states: bool,
}

fn yes() -> bool {
    true
}

pub fn test_file(name: &str) -> String {
    format!("test_{name}.exds")
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<GenerateConfig>(path)?;
    let cfg = &loaded.config;
    let seed = config::effective_seed(cfg.master_seed)?;
    if cfg.ensemble.master_seed != 0 {
        return Err(ConfigError::at("/ensemble/master_seed", "set master_seed at the top level").into());
    }
    for (i, t) in cfg.test_sets.iter().enumerate() {
        let ok = !t.name.is_empty() && t.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !ok {
            return Err(ConfigError::at(format!("/test_sets/{i}/name"), "use [A-Za-z0-9._-] only").into());
        }
    }
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;

    let mut ens = cfg.ensemble.clone();
    ens.master_seed = seed;
    ens.validate()?;
    log::info!("generating {} samples", ens.expected_samples()?);
    let ds = generate_ensemble(&ens)?;
    ds.save(out.path(ENSEMBLE_FILE))?;
    println!("{ENSEMBLE_FILE}: {} samples", ds.n_samples());
    let mut written: Vec<(String, DataSet)> = vec![(ENSEMBLE_FILE.into(), ds)];

    for (k, t) in cfg.test_sets.iter().enumerate() {
        let mut tc = ens.clone();
        tc.sigma_d_list.clear();
        tc.sigma_od_list.clear();
        tc.realizations_per_sigma = 0;
        tc.tranches = t.tranches.clone();
        tc.noise_sigma = t.noise_sigma;
        tc.master_seed = rng::derive_seed(seed, 0x7e57_0000 + k as u64);
        tc.validate().map_err(|e| ConfigError::at(format!("/test_sets/{k}"), e.to_string()))?;
        let ds = generate_ensemble(&tc)?;
        let name = test_file(&t.name);
        ds.save(out.path(&name))?;
        println!("{name}: {} samples", ds.n_samples());
        written.push((name, ds));
    }

    if cfg.clean_states {
        let geom = build_geometry(&ens.geometry)?;
        let scan = TipScan::build(&ens.scan, &geom)?;
        let ds = clean_eigenstates(&geom, &scan)?;
        ds.save(out.path(CLEAN_FILE))?;
        println!("{CLEAN_FILE}: {} samples", ds.n_samples());
        written.push((CLEAN_FILE.into(), ds));
    }

    let mut echo = serde_json::to_value(cfg)?;
    echo["master_seed"] = seed.into();
    let files: Vec<(&str, &DataSet)> = written.iter().map(|(n, d)| (n.as_str(), d)).collect();
    Manifest::describe(&out.dir, &files, echo)?.write(out.path("manifest.json"))?;
    println!("manifest.json: {} files", files.len());
    Ok(())
}
