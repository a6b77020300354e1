//! Convolutional regression network mapping spectra to coefficients.

mod checkpoint;
pub mod eval;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod optim;
mod real;
mod train;

pub use checkpoint::Checkpoint;
pub use eval::{predict, predict_batch, Prediction};
pub use gradcheck::{gradient_check, GradCheck};
pub use layers::{Activation, LayerSpec, PoolKind, Shape};
pub use loss::{loss, normalize_output, MIN_OUTPUT_NORM};
pub use network::{Network, NetworkConfig, GRAD_CHUNK};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use real::Real;
pub use train::{augment_in_place, train, EpochRecord, History, TrainConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn conv(kernel: usize, channels: usize, stride: usize) -> LayerSpec {
        LayerSpec::Conv {
            kernel,
            channels,
            stride,
        }
    }
    const RELU: LayerSpec = LayerSpec::Activation {
        function: Activation::Relu,
    };
    fn pool(width: usize) -> LayerSpec {
        LayerSpec::Pool {
            kind: PoolKind::Avg,
            width,
        }
    }

    fn batch(cfg: &NetworkConfig, bsz: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut g = rng::rng_from_seed(seed);
        let x: Vec<f64> = (0..bsz * cfg.input_len()).map(|_| rng::gaussian(&mut g)).collect();
        let mut t = Vec::new();
        for _ in 0..bsz {
            let raw: Vec<f64> = (0..cfg.output_dim).map(|_| rng::gaussian(&mut g)).collect();
            t.extend(normalize_output(&raw).unwrap());
        }
        (x, t)
    }

    fn check(cfg: NetworkConfig, bsz: usize) -> GradCheck {
        let mut net = Network::<f64>::new(cfg.clone(), 5).unwrap();
        // nonzero biases so every bias path is exercised
        let mut g = rng::rng_from_seed(77);
        for v in net.params.iter_mut() {
            *v += 0.05 * rng::gaussian(&mut g);
        }
        let (x, t) = batch(&cfg, bsz, 3);
        gradient_check(&net, &x, &t, bsz, 1e-6, None).unwrap()
    }

    fn flat_head(out: usize) -> [LayerSpec; 2] {
        [LayerSpec::Flatten, LayerSpec::Dense { units: out }]
    }

    #[test]
    fn gradient_dense() {
        let cfg = NetworkConfig {
            input_shape: vec![7],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 5 }, RELU, LayerSpec::Dense { units: 3 }],
            output_dim: 3,
        };
        let r = check(cfg, 4);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_conv1d_with_stride() {
        let mut layers = vec![conv(3, 2, 1), conv(4, 3, 2)];
        layers.extend(flat_head(4));
        let cfg = NetworkConfig {
            input_shape: vec![16],
            layers,
            output_dim: 4,
        };
        let r = check(cfg, 3);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_tiny_spec_net() {
        // input 16, conv k=3 ch=2, dense -> 4
        let mut layers = vec![conv(3, 2, 1)];
        layers.extend(flat_head(4));
        let cfg = NetworkConfig {
            input_shape: vec![16],
            layers,
            output_dim: 4,
        };
        let r = check(cfg, 2);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_pool1d_with_remainder() {
        let mut layers = vec![conv(2, 3, 1), pool(3)];
        layers.extend(flat_head(3));
        let cfg = NetworkConfig {
            input_shape: vec![12],
            layers,
            output_dim: 3,
        };
        let r = check(cfg, 3);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_relu() {
        let mut layers = vec![conv(3, 4, 1), RELU];
        layers.extend(flat_head(3));
        let cfg = NetworkConfig {
            input_shape: vec![10],
            layers,
            output_dim: 3,
        };
        let r = check(cfg, 3);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_conv2d_and_pool2d() {
        let mut layers = vec![conv(3, 2, 1), RELU, pool(2), conv(2, 3, 2)];
        layers.extend(flat_head(4));
        let cfg = NetworkConfig {
            input_shape: vec![9, 11],
            layers,
            output_dim: 4,
        };
        let r = check(cfg, 2);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn gradient_of_batch_is_mean_of_samples() {
        let cfg = NetworkConfig::reference_1d(100, 4);
        let net = Network::<f64>::new(cfg.clone(), 8).unwrap();
        let (x, t) = batch(&cfg, 3, 9);
        let (l, g) = net.loss_and_gradient(&x, &t, 3).unwrap();
        let mut mean = vec![0.0; g.len()];
        let mut lm = 0.0;
        for s in 0..3 {
            let (ls, gs) = net.loss_and_gradient(&x[s * 100..(s + 1) * 100], &t[s * 4..(s + 1) * 4], 1).unwrap();
            lm += ls / 3.0;
            for (m, v) in mean.iter_mut().zip(&gs) {
                *m += v / 3.0;
            }
        }
        assert!((l - lm).abs() < 1e-14);
        for (a, b) in g.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn chunked_gradient_matches_single_pass() {
        let cfg = NetworkConfig::reference_1d(100, 3);
        let net = Network::<f64>::new(cfg.clone(), 2).unwrap();
        let bsz = GRAD_CHUNK + 5;
        let (x, t) = batch(&cfg, bsz, 4);
        let (_, g) = net.loss_and_gradient(&x, &t, bsz).unwrap();
        let mut d_out = vec![0.0; bsz * 3];
        let raw = net.forward(&x, bsz).unwrap();
        let mut scratch = vec![0.0; 3];
        for s in 0..bsz {
            loss::loss_and_raw_grad(&raw[s * 3..(s + 1) * 3], &t[s * 3..(s + 1) * 3], &mut scratch).unwrap();
            for j in 0..3 {
                d_out[s * 3 + j] = scratch[j] / bsz as f64;
            }
        }
        let mut g2 = vec![0.0; net.n_params()];
        net.backward_from_output(&x, &d_out, bsz, &mut g2).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        let cfg = NetworkConfig {
            input_shape: vec![4],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        let net = Network::<f64>::with_params(cfg, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6, -0.8]).unwrap();
        let x = [0.3, -0.1, 0.5, 0.9];
        let (l, g) = net.loss_and_gradient(&x, &[0.6, -0.8], 1).unwrap();
        assert!(l < 1e-30);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}
