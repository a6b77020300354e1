use std::path::{Path, PathBuf};

use anyhow::Result;
use excirec_core::neuralnet::{eval::predict, Checkpoint};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::output::{read_spectrum_csv, write_vector_csv, Out};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// CSV whose last column holds the spectrum.
    pub spectrum: PathBuf,
    /// Optional CSV of true coefficients; enables the loss.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<PredictConfig>(path)?;
    let cfg = &loaded.config;
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;
    let net = Checkpoint::load(loaded.resolve(&cfg.checkpoint))?.network;
    let spectrum = read_spectrum_csv(&loaded.resolve(&cfg.spectrum))?;
    let truth = match &cfg.truth {
        Some(p) => Some(read_spectrum_csv(&loaded.resolve(p))?),
        None => None,
    };
    let p = predict(&net, &spectrum, truth.as_deref())?;
    let mut w = out.writer("coefficients.csv")?;
    write_vector_csv(&mut w, "coefficient", &p.coefficients)?;
    drop(w);
    out.write_json("prediction.json", &p)?;
    match p.loss {
        Some(l) => println!("{} coefficients, loss {l:.4e}", p.coefficients.len()),
        None => println!("{} coefficients", p.coefficients.len()),
    }
    Ok(())
}
