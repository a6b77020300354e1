use serde::{Deserialize, Serialize};

use super::network::Network;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_b1")]
    pub beta1: f64,
    #[serde(default = "d_b2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: d_lr(),
            beta1: d_b1(),
            beta2: d_b2(),
            epsilon: d_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Non-finite
/// gradients abort before anything is modified.
pub fn adam_step<T: Real>(net: &mut Network<T>, grad: &[T], cfg: &AdamConfig, lr: f64) -> Result<()> {
    if grad.len() != net.params.len() {
        return Err(Error::input("gradient length does not match the parameter count"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient at parameter {i} (step {})",
            net.adam.step + 1
        )));
    }
    let st = &mut net.adam;
    if st.m.len() != grad.len() {
        st.m = vec![T::ZERO; grad.len()];
        st.v = vec![T::ZERO; grad.len()];
        st.step = 0;
    }
    st.step += 1;
    let t = st.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1);
    let c2 = T::from_f64(1.0 - cfg.beta2);
    // fold both bias corrections into the step size
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let step = T::from_f64(lr * bc2.sqrt() / bc1);
    let eps = T::from_f64(cfg.epsilon * bc2.sqrt());
    for (((p, g), m), v) in net.params.iter_mut().zip(grad).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
        *m = b1 * *m + c1 * *g;
        *v = b2 * *v + c2 * *g * *g;
        *p -= step * *m / (v.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::layers::LayerSpec;
    use crate::neuralnet::network::NetworkConfig;

    fn tiny() -> Network<f64> {
        let cfg = NetworkConfig {
            input_shape: vec![2],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            output_dim: 2,
        };
        Network::with_params(cfg, vec![0.5, -0.5, 1.0, 2.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut net = tiny();
        let before = net.params.clone();
        let g = vec![3.0, -0.2, 1e-3, 50.0, -7.0, 0.4];
        adam_step(&mut net, &g, &AdamConfig::default(), 1e-3).unwrap();
        for i in 0..6 {
            let d = net.params[i] - before[i];
            assert!((d + 1e-3 * g[i].signum()).abs() < 1e-8, "{i}: {d}");
        }
        assert_eq!(net.adam.step, 1);
    }

    #[test]
    fn textbook_update_over_several_steps() {
        let cfg = AdamConfig::default();
        let mut net = tiny();
        let mut p = net.params.clone();
        let (mut m, mut v) = (vec![0.0; 6], vec![0.0; 6]);
        for t in 1..=5 {
            let g: Vec<f64> = (0..6).map(|i| ((i * t) as f64).sin() + 0.1).collect();
            adam_step(&mut net, &g, &cfg, 2e-3).unwrap();
            for i in 0..6 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t as i32));
                let vh = v[i] / (1.0 - 0.999f64.powi(t as i32));
                p[i] -= 2e-3 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..6 {
            assert!((net.params[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut net = tiny();
        let before = net.params.clone();
        adam_step(&mut net, &[0.0; 6], &AdamConfig::default(), 1e-3).unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = tiny();
        let before = net.params.clone();
        let r = adam_step(&mut net, &[0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0], &AdamConfig::default(), 1e-3);
        assert!(matches!(r, Err(Error::Training(_))));
        assert_eq!(net.params, before);
        assert_eq!(net.adam.step, 0);
    }
}
