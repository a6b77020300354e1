use std::path::{Path, PathBuf};

use anyhow::Result;
use excirec_core::dataset::{split, DataSet};
use excirec_core::nearfield::ScanConfig;
use excirec_core::neuralnet::{train, Checkpoint, Network, NetworkConfig, TrainConfig};
use excirec_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError};
use crate::output::Out;

pub const MODEL_FILE: &str = "model.exnn";

fn d_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: PathBuf,
    /// Separate validation set; when absent the dataset is split.
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default = "d_split")]
    pub split_fraction: f64,
    /// Defaults to the reference architecture for the dataset's scan.
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub training: TrainConfig,
}

/// Reference network matching the scan the dataset was generated with.
pub fn default_network(ds: &DataSet) -> NetworkConfig {
    match ds.config.as_ref().map(|c| &c.scan) {
        Some(ScanConfig::Grid { nx, ny, .. }) if nx * ny == ds.n_tip => NetworkConfig::reference_2d(*ny, *nx, ds.n_sites),
        _ => NetworkConfig::reference_1d(ds.n_tip, ds.n_sites),
    }
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<TrainRunConfig>(path)?;
    let cfg = &loaded.config;
    let seed = config::effective_seed(cfg.master_seed)?;
    if cfg.training.shuffle_seed != 0 {
        return Err(ConfigError::at("/training/shuffle_seed", "derived from master_seed; leave unset").into());
    }
    cfg.training
        .validate()
        .map_err(|e| ConfigError::at("/training", e.to_string()))?;
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;

    let data = DataSet::load(loaded.resolve(&cfg.dataset))?;
    let (tr, va) = match &cfg.validation {
        Some(p) => (data, DataSet::load(loaded.resolve(p))?),
        None => split(&data, cfg.split_fraction, derive_seed(seed, 3))?,
    };
    let net_cfg = cfg.network.clone().unwrap_or_else(|| default_network(&tr));
    let mut net = Network::<f32>::new(net_cfg, derive_seed(seed, 1))?;
    let mut tc = cfg.training.clone();
    tc.shuffle_seed = derive_seed(seed, 2);
    log::info!(
        "training {} parameters on {} samples, validating on {}",
        net.n_params(),
        tr.n_samples(),
        va.n_samples()
    );
    let history = train(&mut net, &tr, &va, &tc, &mut |r| {
        log::info!("epoch {:4}  train {:.4e}  val {:.4e}", r.epoch, r.train_loss, r.val_loss);
    })?;
    out.write_with("history.csv", |w| history.write_csv(w))?;

    let mut ck = Checkpoint::new(net);
    let mut echo = loaded.raw.clone();
    echo["master_seed"] = seed.into();
    ck.extra = serde_json::json!({ "config": echo, "history": history });
    ck.save(out.path(MODEL_FILE))?;
    println!(
        "{MODEL_FILE}: best epoch {} val loss {:.4e}",
        history.best_epoch,
        history.best_val_loss()
    );
    Ok(())
}
