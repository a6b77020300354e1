use rand::Rng as _;

use super::{clip, OptimizerSettings, Tracker, LOWER, UPPER};
use crate::rng;

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;
const COLLAPSE: f64 = 1e-9;
const MAX_RESTARTS: usize = 1;

/// Simplex around `x0`, one vertex per axis offset by `step` (inward at the
/// upper bound).
fn simplex(x0: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut s = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += if v[i] + step <= UPPER { step } else { -step };
        s.push(v);
    }
    s
}

fn collapsed(s: &[Vec<f64>]) -> bool {
    s[1..]
        .iter()
        .all(|v| v.iter().zip(&s[0]).all(|(a, b)| (a - b).abs() < COLLAPSE))
}

/// Returns the number of restarts used.
pub(super) fn run(t: &mut Tracker, dim: usize, cfg: &OptimizerSettings, seed: u64) -> usize {
    let mut g = rng::stream(seed, 0);
    let mut start: Vec<f64> = (0..dim).map(|_| g.gen_range(LOWER..UPPER)).collect();
    let mut restarts = 0;
    loop {
        let mut s = simplex(&start, cfg.nm_initial_step);
        let mut fs = Vec::with_capacity(dim + 1);
        for v in &s {
            if t.done() {
                return restarts;
            }
            fs.push(t.eval(v));
        }
        loop {
            if t.done() {
                return restarts;
            }
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
            s = order.iter().map(|&i| s[i].clone()).collect();
            fs = order.iter().map(|&i| fs[i]).collect();
            if collapsed(&s) {
                break;
            }
            let mut cen = vec![0.0; dim];
            for v in &s[..dim] {
                for (c, x) in cen.iter_mut().zip(v) {
                    *c += x / dim as f64;
                }
            }
            let along = |k: f64, p: &[f64]| -> Vec<f64> {
                let mut x: Vec<f64> = cen.iter().zip(p).map(|(c, w)| c + k * (c - w)).collect();
                clip(&mut x);
                x
            };
            let xr = along(ALPHA, &s[dim]);
            let fr = t.eval(&xr);
            if fr < fs[0] {
                if t.done() {
                    return restarts;
                }
                let xe = along(GAMMA, &s[dim]);
                let fe = t.eval(&xe);
                if fe < fr {
                    (s[dim], fs[dim]) = (xe, fe);
                } else {
                    (s[dim], fs[dim]) = (xr, fr);
                }
                continue;
            }
            if fr < fs[dim - 1] {
                (s[dim], fs[dim]) = (xr, fr);
                continue;
            }
            if t.done() {
                return restarts;
            }
            // outside contraction toward the reflected point, else inside
            let (xc, fc, accept) = if fr < fs[dim] {
                let xc = along(-RHO, &xr);
                let fc = t.eval(&xc);
                (xc, fc, fc <= fr)
            } else {
                let xc = along(-RHO, &s[dim]);
                let fc = t.eval(&xc);
                (xc, fc, fc < fs[dim])
            };
            if accept {
                (s[dim], fs[dim]) = (xc, fc);
                continue;
            }
            for i in 1..=dim {
                if t.done() {
                    return restarts;
                }
                let best = s[0].clone();
                for (x, b) in s[i].iter_mut().zip(&best) {
                    *x = b + SIGMA * (*x - b);
                }
                fs[i] = t.eval(&s[i]);
            }
        }
        if restarts == MAX_RESTARTS || t.done() {
            return restarts;
        }
        restarts += 1;
        start = t.best_x.clone();
    }
}
