use std::path::{Path, PathBuf};

use anyhow::Result;
use excirec_core::dataset::DataSet;
use excirec_core::neuralnet::augment_in_place;
use excirec_core::neuralnet::eval::{
    dataset_losses, loss_histogram, per_state_losses, summarize, write_histogram_csv, write_losses_csv,
    write_state_losses_csv, Summary,
};
use excirec_core::neuralnet::Checkpoint;
use excirec_core::rng;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError};
use crate::output::Out;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSet {
    pub name: String,
    pub path: PathBuf,
    /// Relative noise added to the stored inputs before evaluation.
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    pub lo_exp: i32,
    pub hi_exp: i32,
    pub bins_per_decade: usize,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            lo_exp: -6,
            hi_exp: 1,
            bins_per_decade: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub datasets: Vec<EvalSet>,
    #[serde(default)]
    pub histogram: Histogram,
}

#[derive(Debug, Serialize)]
struct SetSummary {
    name: String,
    noise_sigma: f64,
    #[serde(flatten)]
    losses: Summary,
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<EvaluateConfig>(path)?;
    let cfg = &loaded.config;
    let seed = config::effective_seed(cfg.master_seed)?;
    let h = &cfg.histogram;
    if h.hi_exp <= h.lo_exp || h.bins_per_decade == 0 {
        return Err(ConfigError::at("/histogram", "need hi_exp > lo_exp and bins_per_decade >= 1").into());
    }
    if cfg.datasets.is_empty() {
        return Err(ConfigError::at("/datasets", "no datasets given").into());
    }
    for (i, s) in cfg.datasets.iter().enumerate() {
        if !(s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
            return Err(ConfigError::at(format!("/datasets/{i}/noise_sigma"), "must be >= 0").into());
        }
        if s.name.is_empty() || cfg.datasets[..i].iter().any(|o| o.name == s.name) {
            return Err(ConfigError::at(format!("/datasets/{i}/name"), "names must be nonempty and unique").into());
        }
    }
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;
    let net = Checkpoint::load(loaded.resolve(&cfg.checkpoint))?.network;

    let mut summaries = Vec::new();
    for (k, s) in cfg.datasets.iter().enumerate() {
        let mut ds = DataSet::load(loaded.resolve(&s.path))?;
        if s.noise_sigma > 0.0 {
            let mut g = rng::stream(seed, k as u64);
            let n = ds.n_tip;
            augment_in_place(&mut ds.inputs, n, s.noise_sigma, &mut g);
        }
        let losses = dataset_losses(&net, &ds)?;
        out.write_with(&format!("losses_{}.csv", s.name), |w| write_losses_csv(&ds.meta, &losses, w))?;
        let bins = loss_histogram(&losses, h.lo_exp, h.hi_exp, h.bins_per_decade);
        out.write_with(&format!("histogram_{}.csv", s.name), |w| write_histogram_csv(&bins, w))?;
        let states = per_state_losses(&ds.meta, &losses);
        out.write_with(&format!("states_{}.csv", s.name), |w| write_state_losses_csv(&states, w))?;
        let sum = summarize(&losses);
        println!(
            "{}: {} samples, mean loss {:.4e}, median {:.4e}",
            s.name, sum.count, sum.mean, sum.median
        );
        summaries.push(SetSummary {
            name: s.name.clone(),
            noise_sigma: s.noise_sigma,
            losses: sum,
        });
    }
    out.write_json("summary.json", &summaries)?;
    Ok(())
}
