use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optim::{adam_step, AdamConfig};
use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::nearfield::add_noise_in_place;
use crate::rng;

fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    1e-3
}
fn d_b1() -> f64 {
    0.9
}
fn d_b2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_decay() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_b1")]
    pub beta1: f64,
    #[serde(default = "d_b2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    /// Learning rate is multiplied by this after every epoch.
    #[serde(default = "d_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
    /// Relative noise added to each training input per batch (0 = off).
    #[serde(default)]
    pub noise_sigma: f64,
    /// Restore the parameters of the best validation epoch at the end.
    #[serde(default = "d_true")]
    pub keep_best: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            batch_size: d_batch(),
            learning_rate: d_lr(),
            beta1: d_b1(),
            beta2: d_b2(),
            epsilon: d_eps(),
            lr_decay: d_decay(),
            shuffle_seed: 0,
            noise_sigma: 0.0,
            keep_best: true,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must lie in (0, 1]"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the network holds after training.
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::NAN, |e| e.val_loss)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(w, "{},{:e},{:e}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    }
}

fn check_dims(net: &Network<f32>, ds: &DataSet, what: &str) -> Result<()> {
    if ds.n_tip != net.input_len() || ds.n_sites != net.output_dim() {
        return Err(Error::input(format!(
            "{what} set has shape ({}, {}), network expects ({}, {})",
            ds.n_tip,
            ds.n_sites,
            net.input_len(),
            net.output_dim()
        )));
    }
    if ds.is_empty() {
        return Err(Error::input(format!("{what} set is empty")));
    }
    Ok(())
}

/// Adds relative noise and rescales each row back to unit maximum.
pub fn augment_in_place(x: &mut [f32], row_len: usize, sigma_n: f64, rng: &mut rng::Rng) {
    for row in x.chunks_exact_mut(row_len) {
        add_noise_in_place(row, sigma_n, rng);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
        if max > 0.0 && max.is_finite() {
            let inv = 1.0 / max as f64;
            row.iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
        }
    }
}

/// Minibatch Adam over shuffled epochs. `on_epoch` sees every record as it
/// is produced.
pub fn train(
    net: &mut Network<f32>,
    train_set: &DataSet,
    val_set: &DataSet,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    check_dims(net, train_set, "training")?;
    check_dims(net, val_set, "validation")?;
    let adam = cfg.adam();
    let n = train_set.n_samples();
    let (ins, outs) = (net.input_len(), net.output_dim());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();
    let mut best = (f64::INFINITY, net.params.clone());
    let mut lr = cfg.learning_rate;
    let mut xb = Vec::with_capacity(cfg.batch_size * ins);
    let mut tb = Vec::with_capacity(cfg.batch_size * outs);

    for epoch in 1..=cfg.epochs {
        let epoch_seed = rng::derive_seed(cfg.shuffle_seed, epoch as u64);
        order.shuffle(&mut rng::rng_from_seed(epoch_seed));
        let mut sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            xb.clear();
            tb.clear();
            for &i in idx {
                xb.extend_from_slice(train_set.input(i));
                tb.extend_from_slice(train_set.target(i));
            }
            if cfg.noise_sigma > 0.0 {
                let mut g = rng::stream(epoch_seed ^ 0xa5a5_5a5a, b as u64);
                augment_in_place(&mut xb, ins, cfg.noise_sigma, &mut g);
            }
            let (loss, grad) = net.loss_and_gradient(&xb, &tb, idx.len())?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam_step(net, &grad, &adam, lr)?;
            sum += loss * idx.len() as f64;
        }
        let val_loss = net.mean_loss(&val_set.inputs, &val_set.targets, val_set.n_samples())?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / n as f64,
            val_loss,
        };
        log::info!(
            "epoch {epoch}/{}: train {:.4e} val {:.4e} lr {lr:.2e}",
            cfg.epochs,
            rec.train_loss,
            rec.val_loss
        );
        on_epoch(&rec);
        history.epochs.push(rec);
        if val_loss < best.0 {
            best = (val_loss, net.params.clone());
            history.best_epoch = epoch;
        }
        lr *= cfg.lr_decay;
    }
    if cfg.keep_best {
        net.params = best.1;
    } else {
        history.best_epoch = cfg.epochs;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_ensemble, EnsembleConfig};
    use crate::geometry::GeometryConfig;
    use crate::nearfield::ScanConfig;
    use crate::neuralnet::eval::predict;
    use crate::neuralnet::layers::{Activation, LayerSpec, PoolKind};
    use crate::neuralnet::network::NetworkConfig;

    fn small_set(n: usize, seed: u64) -> DataSet {
        let mut cfg = EnsembleConfig::new(GeometryConfig::chain(8), vec![0.1], n / 8);
        cfg.scan = ScanConfig::line(48, 9.0, 1.0);
        cfg.master_seed = seed;
        generate_ensemble(&cfg).unwrap()
    }

    fn small_net(seed: u64) -> Network<f32> {
        let relu = LayerSpec::Activation {
            function: Activation::Relu,
        };
        let cfg = NetworkConfig {
            input_shape: vec![48],
            layers: vec![
                LayerSpec::Conv {
                    kernel: 5,
                    channels: 8,
                    stride: 1,
                },
                relu.clone(),
                LayerSpec::Pool {
                    kind: PoolKind::Avg,
                    width: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 64 },
                relu,
                LayerSpec::Dense { units: 8 },
            ],
            output_dim: 8,
        };
        Network::new(cfg, seed).unwrap()
    }

    #[test]
    fn memorizes_small_set() {
        let ds = small_set(64, 1);
        assert_eq!(ds.n_samples(), 64);
        let mut net = small_net(2);
        let mut cfg = TrainConfig::new(200);
        cfg.batch_size = 16;
        let h = train(&mut net, &ds, &ds, &cfg, &mut |_| {}).unwrap();
        let last = h.epochs.last().unwrap();
        assert!(last.train_loss < 1e-3, "train loss {}", last.train_loss);
        assert!(h.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
        for i in [0, 17, 63] {
            let x: Vec<f64> = ds.input(i).iter().map(|v| *v as f64).collect();
            let t: Vec<f64> = ds.target(i).iter().map(|v| *v as f64).collect();
            let p = predict(&net, &x, Some(&t)).unwrap();
            assert_eq!(p.coefficients.len(), 8);
            let norm: f64 = p.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            assert!(p.loss.unwrap() < 1e-3, "sample {i}: {:?}", p.loss);
        }
    }

    #[test]
    fn history_is_deterministic() {
        let ds = small_set(40, 3);
        let run = || {
            let mut net = small_net(4);
            let mut cfg = TrainConfig::new(4);
            cfg.batch_size = 8;
            cfg.noise_sigma = 0.05;
            cfg.shuffle_seed = 11;
            let h = train(&mut net, &ds, &ds, &cfg, &mut |_| {}).unwrap();
            (h, net.params)
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn keep_best_restores_best_epoch() {
        let ds = small_set(40, 5);
        let mut net = small_net(6);
        let mut cfg = TrainConfig::new(5);
        cfg.learning_rate = 3e-2;
        let mut seen = Vec::new();
        let h = train(&mut net, &ds, &ds, &cfg, &mut |r| seen.push(*r)).unwrap();
        assert_eq!(seen, h.epochs);
        let best = h.best_val_loss();
        assert!(h.epochs.iter().all(|e| e.val_loss >= best));
        let now = net.mean_loss(&ds.inputs, &ds.targets, ds.n_samples()).unwrap();
        assert!((now - best).abs() <= 1e-12 * (1.0 + best));
    }

    #[test]
    fn relabeled_targets_leave_loss_unchanged() {
        let ds = small_set(16, 7);
        let net = small_net(8);
        let mut flipped = ds.clone();
        for v in flipped.targets.iter_mut() {
            *v = -*v;
        }
        let a = net.sample_losses(&ds.inputs, &ds.targets, 16).unwrap();
        let b = net.sample_losses(&flipped.inputs, &flipped.targets, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = small_set(16, 9);
        let mut net = small_net(1);
        let empty = DataSet::empty(48, 8);
        assert!(train(&mut net, &ds, &empty, &TrainConfig::new(1), &mut |_| {}).is_err());
        assert!(train(&mut net, &ds, &ds, &TrainConfig::new(0), &mut |_| {}).is_err());
        let other = DataSet::empty(40, 8);
        assert!(train(&mut net, &other, &ds, &TrainConfig::new(1), &mut |_| {}).is_err());
    }

    #[test]
    fn augmentation_keeps_unit_max() {
        let mut x = vec![0.2f32, 1.0, 0.5, 0.1, 0.9, 1.0];
        augment_in_place(&mut x, 3, 0.1, &mut rng::rng_from_seed(1));
        for row in x.chunks(3) {
            let m = row.iter().fold(f32::MIN, |a, b| a.max(*b));
            assert!((m - 1.0).abs() < 1e-6);
        }
    }
}
