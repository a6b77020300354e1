use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{compile, Activation, Layer, LayerSpec, PoolKind, Shape};
use super::loss::loss_and_raw_grad;
use super::optim::AdamState;
use super::real::Real;
use crate::error::{Error, Result};
use crate::rng;

/// Samples per gradient work unit. Fixed so the reduction order, and hence
/// the result, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[n_tip]` for line scans, `[ny, nx]` for grids.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

fn conv(kernel: usize, channels: usize) -> LayerSpec {
    LayerSpec::Conv {
        kernel,
        channels,
        stride: 1,
    }
}

const RELU: LayerSpec = LayerSpec::Activation {
    function: Activation::Relu,
};

fn pool2() -> LayerSpec {
    LayerSpec::Pool {
        kind: PoolKind::Avg,
        width: 2,
    }
}

impl NetworkConfig {
    /// Conv(9,16) relu pool2 Conv(9,32) relu pool2 Conv(5,32) relu flatten
    /// Dense(256) relu Dense(n_out).
    pub fn reference_1d(n_tip: usize, n_out: usize) -> Self {
        NetworkConfig {
            input_shape: vec![n_tip],
            layers: vec![
                conv(9, 16),
                RELU,
                pool2(),
                conv(9, 32),
                RELU,
                pool2(),
                conv(5, 32),
                RELU,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 256 },
                RELU,
                LayerSpec::Dense { units: n_out },
            ],
            output_dim: n_out,
        }
    }

    /// 2D analogue of [`reference_1d`](Self::reference_1d) with square kernels.
    pub fn reference_2d(ny: usize, nx: usize, n_out: usize) -> Self {
        NetworkConfig {
            input_shape: vec![ny, nx],
            layers: vec![
                conv(5, 16),
                RELU,
                pool2(),
                conv(5, 32),
                RELU,
                pool2(),
                conv(3, 32),
                RELU,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 256 },
                RELU,
                LayerSpec::Dense { units: n_out },
            ],
            output_dim: n_out,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn input(&self) -> Result<Shape> {
        if self.input_shape.is_empty() || self.input_shape.len() > 2 || self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "input_shape must be [len] or [ny, nx] with nonzero entries, got {:?}",
                self.input_shape
            )));
        }
        Ok(Shape {
            spatial: self.input_shape.clone(),
            channels: 1,
        })
    }

    pub(crate) fn compile(&self) -> Result<Vec<Layer>> {
        let (layers, out) = compile(&self.input()?, &self.layers)?;
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.output_dim && out.spatial.is_empty() => Ok(layers),
            _ => Err(Error::config(format!(
                "the last layer must be dense with units = output_dim ({})",
                self.output_dim
            ))),
        }
    }

    /// Analytic parameter count.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.compile()?.iter().map(|l| l.n_params).sum())
    }
}

#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    pub config: NetworkConfig,
    pub(crate) layers: Vec<Layer>,
    pub params: Vec<T>,
    pub adam: AdamState<T>,
}

impl<T: Real> Network<T> {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        let layers = config.compile()?;
        let n: usize = layers.iter().map(|l| l.n_params).sum();
        Ok(Network {
            config,
            layers,
            params: vec![T::ZERO; n],
            adam: AdamState::default(),
        })
    }

    /// He-normal weights, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut g = rng::rng_from_seed(seed);
        for l in &net.layers {
            if l.n_weights == 0 {
                continue;
            }
            let std = (2.0 / l.fan_in as f64).sqrt();
            for p in &mut net.params[l.p_off..l.p_off + l.n_weights] {
                let z: f64 = StandardNormal.sample(&mut g);
                *p = T::from_f64(std * z);
            }
        }
        Ok(net)
    }

    pub fn with_params(config: NetworkConfig, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::input(format!(
                "parameter buffer has {} entries, config needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Per-layer `(weights, biases)` spans, for inspection and tests.
    pub fn layer_param_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layers.iter().map(|l| l.p_off..l.p_off + l.n_params).collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            adam: AdamState::default(),
        }
    }

    fn check_batch(&self, x: &[T], bsz: usize) -> Result<()> {
        if bsz == 0 || x.len() != bsz * self.input_len() {
            return Err(Error::input(format!(
                "input batch has {} values, expected {bsz} x {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn lp(&self, l: &Layer) -> &[T] {
        &self.params[l.p_off..l.p_off + l.n_params]
    }

    /// Raw (unnormalized) outputs, `bsz x output_dim`.
    pub fn forward(&self, x: &[T], bsz: usize) -> Result<Vec<T>> {
        self.check_batch(x, bsz)?;
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut next = vec![T::ZERO; bsz * l.out_size];
            l.forward(self.lp(l), &cur, &mut next, bsz);
            cur = next;
        }
        Ok(cur)
    }

    fn forward_cached(&self, x: &[T], bsz: usize) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut next = vec![T::ZERO; bsz * l.out_size];
            l.forward(self.lp(l), acts.last().unwrap(), &mut next, bsz);
            acts.push(next);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient w.r.t. raw outputs), accumulating
    /// into `grad`.
    pub fn backward_from_output(&self, x: &[T], d_out: &[T], bsz: usize, grad: &mut [T]) -> Result<()> {
        self.check_batch(x, bsz)?;
        if d_out.len() != bsz * self.output_dim() || grad.len() != self.n_params() {
            return Err(Error::input("gradient buffer shape mismatch"));
        }
        let acts = self.forward_cached(x, bsz);
        self.backprop(&acts, d_out.to_vec(), bsz, grad);
        Ok(())
    }

    fn backprop(&self, acts: &[Vec<T>], mut dy: Vec<T>, bsz: usize, grad: &mut [T]) {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = &mut grad[l.p_off..l.p_off + l.n_params];
            if i == 0 {
                l.backward(self.lp(l), &acts[i], &acts[i + 1], &dy, bsz, g, None);
            } else {
                let mut dx = vec![T::ZERO; bsz * l.in_size];
                l.backward(self.lp(l), &acts[i], &acts[i + 1], &dy, bsz, g, Some(&mut dx));
                dy = dx;
            }
        }
    }

    /// Summed loss over a chunk; accumulates summed-loss gradients.
    fn chunk_loss_grad(&self, x: &[T], targets: &[T], bsz: usize, grad: &mut [T]) -> Result<f64> {
        let n = self.output_dim();
        let acts = self.forward_cached(x, bsz);
        let raw = acts.last().unwrap();
        let mut d_out = vec![T::ZERO; bsz * n];
        let mut total = 0.0;
        for s in 0..bsz {
            total += loss_and_raw_grad(
                &raw[s * n..(s + 1) * n],
                &targets[s * n..(s + 1) * n],
                &mut d_out[s * n..(s + 1) * n],
            )?;
        }
        self.backprop(&acts, d_out, bsz, grad);
        Ok(total)
    }

    /// Mean sign-resolved loss over the batch and its gradient.
    pub fn loss_and_gradient(&self, x: &[T], targets: &[T], bsz: usize) -> Result<(f64, Vec<T>)> {
        self.check_batch(x, bsz)?;
        let n = self.output_dim();
        if targets.len() != bsz * n {
            return Err(Error::input(format!(
                "targets have {} values, expected {bsz} x {n}",
                targets.len()
            )));
        }
        let ins = self.input_len();
        let chunks: Vec<(usize, usize)> = (0..bsz)
            .step_by(GRAD_CHUNK)
            .map(|a| (a, (a + GRAD_CHUNK).min(bsz)))
            .collect();
        let parts: Vec<(f64, Vec<T>)> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let mut g = vec![T::ZERO; self.n_params()];
                let l = self.chunk_loss_grad(&x[a * ins..b * ins], &targets[a * n..b * n], b - a, &mut g)?;
                Ok((l, g))
            })
            .collect::<Result<_>>()?;
        let mut it = parts.into_iter();
        let (mut loss, mut grad) = it.next().expect("at least one chunk");
        for (l, g) in it {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        let scale = T::from_f64(1.0 / bsz as f64);
        grad.iter_mut().for_each(|v| *v *= scale);
        Ok((loss / bsz as f64, grad))
    }

    /// Mean loss only (no gradient), evaluated in chunks.
    pub fn mean_loss(&self, x: &[T], targets: &[T], bsz: usize) -> Result<f64> {
        Ok(self.sample_losses(x, targets, bsz)?.iter().sum::<f64>() / bsz as f64)
    }

    pub fn sample_losses(&self, x: &[T], targets: &[T], bsz: usize) -> Result<Vec<f64>> {
        self.check_batch(x, bsz)?;
        let n = self.output_dim();
        let ins = self.input_len();
        if targets.len() != bsz * n {
            return Err(Error::input("target batch shape mismatch"));
        }
        let chunks: Vec<(usize, usize)> = (0..bsz)
            .step_by(256)
            .map(|a| (a, (a + 256).min(bsz)))
            .collect();
        let parts: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let raw = self.forward(&x[a * ins..b * ins], b - a)?;
                let mut scratch = vec![T::ZERO; n];
                (0..b - a)
                    .map(|s| loss_and_raw_grad(&raw[s * n..(s + 1) * n], &targets[(a + s) * n..(a + s + 1) * n], &mut scratch))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(parts.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameter_count() {
        let cfg = NetworkConfig::reference_1d(512, 20);
        let expect = (9 * 16 + 16) + (9 * 16 * 32 + 32) + (5 * 32 * 32 + 32) + (118 * 32 * 256 + 256) + (256 * 20 + 20);
        assert_eq!(cfg.param_count().unwrap(), expect);
        let net = Network::<f32>::new(cfg, 1).unwrap();
        assert_eq!(net.n_params(), expect);
        let c2 = NetworkConfig::reference_2d(64, 64, 50);
        // 64 -> 60 -> 30 -> 26 -> 13 -> 11
        let e2 = (25 * 16 + 16) + (25 * 16 * 32 + 32) + (9 * 32 * 32 + 32) + (11 * 11 * 32 * 256 + 256) + (256 * 50 + 50);
        assert_eq!(c2.param_count().unwrap(), e2);
    }

    #[test]
    fn invalid_stacks_rejected() {
        let mut c = NetworkConfig::reference_1d(512, 20);
        c.output_dim = 19;
        assert!(c.param_count().is_err());
        let c = NetworkConfig {
            input_shape: vec![8],
            layers: vec![LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        assert!(c.param_count().is_err(), "dense without flatten");
        let c = NetworkConfig {
            input_shape: vec![8],
            layers: vec![conv(9, 2), LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        assert!(c.param_count().is_err(), "kernel longer than input");
        let c = NetworkConfig {
            input_shape: vec![],
            layers: vec![LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        assert!(c.param_count().is_err());
    }

    #[test]
    fn zero_network_gives_zero_output() {
        let net = Network::<f32>::zeros(NetworkConfig::reference_1d(64, 5)).unwrap();
        let x: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
        assert!(net.forward(&x, 2).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dense_layer_is_affine() {
        let cfg = NetworkConfig {
            input_shape: vec![3],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        // W is 3x2 row-major, then bias
        let p = vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.1, -0.2];
        let net = Network::<f64>::with_params(cfg, p).unwrap();
        let y = net.forward(&[1.0, 2.0, 3.0, 0.0, -1.0, 4.0], 2).unwrap();
        let oracle = |x: [f64; 3]| {
            [
                x[0] * 1.0 + x[1] * -1.0 + x[2] * 3.0 + 0.1,
                x[0] * 2.0 + x[1] * 0.5 + x[2] * -2.0 - 0.2,
            ]
        };
        let a = oracle([1.0, 2.0, 3.0]);
        let b = oracle([0.0, -1.0, 4.0]);
        assert_eq!(y, vec![a[0], a[1], b[0], b[1]]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = Network::<f64>::new(NetworkConfig::reference_1d(64, 5), 3).unwrap();
        let x: Vec<f64> = (0..3 * 64).map(|i| (i * 7 % 13) as f64 / 13.0).collect();
        let all = net.forward(&x, 3).unwrap();
        for s in 0..3 {
            let one = net.forward(&x[s * 64..(s + 1) * 64], 1).unwrap();
            for j in 0..5 {
                assert!((one[j] - all[s * 5 + j]).abs() < 1e-12);
            }
        }
        assert!(net.forward(&x[..63], 1).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = NetworkConfig::reference_1d(512, 20);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""type":"conv""#));
        let back: NetworkConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replace(r#""units":256"#, r#""units":256,"dropout":0.5"#);
        assert!(serde_json::from_str::<NetworkConfig>(&bad).is_err());
    }
}
