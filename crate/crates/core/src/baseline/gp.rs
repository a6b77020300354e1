//! Expected-improvement search on a local Gaussian-process surrogate of
//! `log10(cost)`.

use rand::Rng as _;
use rayon::prelude::*;

use super::{clip, OptimizerSettings, Tracker, LOWER, UPPER};
use crate::linalg::{backward_subst_t, cholesky, forward_subst};
use crate::rng;

const JITTER: f64 = 1e-8;
const FIT_ITERS: usize = 50;
const LOG_LS: (f64, f64) = (-5.0, 3.0);
const LOG_SF2: (f64, f64) = (-6.0, 6.0);
const LOG_SN2: (f64, f64) = (-14.0, 0.0);
const SCALES: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

/// Squared-exponential kernel with per-dimension length scales and white
/// noise. `theta = [ln l_1..ln l_d, ln sf2, ln sn2]`.
struct Gp {
    dim: usize,
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    inv_ls2: Vec<f64>,
    sf2: f64,
}

fn se(a: &[f64], b: &[f64], inv_ls2: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(inv_ls2).map(|((p, q), w)| (p - q) * (p - q) * w).sum();
    (-0.5 * s).exp()
}

fn gram(x: &[Vec<f64>], theta: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let inv_ls2: Vec<f64> = theta[..dim].iter().map(|l| (-2.0 * l).exp()).collect();
    let sf2 = theta[dim].exp();
    let mut kse = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = se(&x[i], &x[j], &inv_ls2);
            kse[i * n + j] = v;
            kse[j * n + i] = v;
        }
    }
    let mut k: Vec<f64> = kse.iter().map(|v| sf2 * v).collect();
    let sn2 = theta[dim + 1].exp() + JITTER;
    for i in 0..n {
        k[i * n + i] += sn2;
    }
    (kse, k)
}

fn solve(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = b.to_vec();
    forward_subst(n, l, &mut a);
    backward_subst_t(n, l, &mut a);
    a
}

/// Negative log marginal likelihood and its gradient.
fn nll(x: &[Vec<f64>], y: &[f64], theta: &[f64], dim: usize) -> Option<(f64, Vec<f64>)> {
    let n = x.len();
    let (kse, k) = gram(x, theta, dim);
    let l = cholesky(n, &k)?;
    let alpha = solve(n, &l, y);
    let value = 0.5 * y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
        + (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();
    // W = K^-1 - alpha alpha^T
    let mut w = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve(n, &l, &e);
        for i in 0..n {
            w[i * n + j] = col[i] - alpha[i] * alpha[j];
        }
    }
    let sf2 = theta[dim].exp();
    let mut grad = vec![0.0; dim + 2];
    for i in 0..n {
        for j in 0..n {
            let wk = w[i * n + j] * sf2 * kse[i * n + j];
            grad[dim] += 0.5 * wk;
            for d in 0..dim {
                let dx = x[i][d] - x[j][d];
                grad[d] += 0.5 * wk * dx * dx * (-2.0 * theta[d]).exp();
            }
        }
    }
    let sn2 = theta[dim + 1].exp();
    grad[dim + 1] = 0.5 * sn2 * (0..n).map(|i| w[i * n + i]).sum::<f64>();
    Some((value, grad))
}

fn project(theta: &mut [f64], dim: usize) {
    for (i, t) in theta.iter_mut().enumerate() {
        let (lo, hi) = if i < dim {
            LOG_LS
        } else if i == dim {
            LOG_SF2
        } else {
            LOG_SN2
        };
        *t = t.clamp(lo, hi);
    }
}

/// Projected gradient descent with backtracking on the negative log
/// marginal likelihood.
fn fit(x: &[Vec<f64>], y: &[f64], mut theta: Vec<f64>, dim: usize) -> Vec<f64> {
    project(&mut theta, dim);
    let Some((mut f, mut g)) = nll(x, y, &theta, dim) else {
        return theta;
    };
    let mut eta = 0.5;
    for _ in 0..FIT_ITERS {
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - eta * d).collect();
            project(&mut cand, dim);
            let dec: f64 = theta.iter().zip(&cand).zip(&g).map(|((t, c), d)| d * (t - c)).sum();
            if dec <= 1e-12 {
                break;
            }
            if let Some((fc, gc)) = nll(x, y, &cand, dim) {
                if fc <= f - 1e-4 * dec {
                    (theta, f, g) = (cand, fc, gc);
                    accepted = true;
                    eta *= 2.0;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

impl Gp {
    fn new(x: Vec<Vec<f64>>, y: &[f64], theta: &[f64], dim: usize) -> Option<Gp> {
        let n = x.len();
        let (_, mut k) = gram(&x, theta, dim);
        let mut extra = 0.0;
        for _ in 0..8 {
            if let Some(chol) = cholesky(n, &k) {
                let alpha = solve(n, &chol, y);
                return Some(Gp {
                    dim,
                    inv_ls2: theta[..dim].iter().map(|l| (-2.0 * l).exp()).collect(),
                    sf2: theta[dim].exp(),
                    x,
                    chol,
                    alpha,
                });
            }
            let bump = if extra == 0.0 { 1e-8 } else { extra * 9.0 };
            extra += bump;
            for i in 0..n {
                k[i * n + i] += bump;
            }
        }
        None
    }

    fn predict(&self, q: &[f64]) -> (f64, f64) {
        debug_assert_eq!(q.len(), self.dim);
        let n = self.x.len();
        let mut ks: Vec<f64> = self.x.iter().map(|xi| self.sf2 * se(q, xi, &self.inv_ls2)).collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward_subst(n, &self.chol, &mut ks);
        let var = (self.sf2 - ks.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
        (mu, var.sqrt())
    }
}

fn expected_improvement(best: f64, mu: f64, sd: f64) -> f64 {
    let z = (best - mu) / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (best - mu) * cdf + sd * pdf
}

pub(super) fn run(t: &mut Tracker, dim: usize, cfg: &OptimizerSettings, seed: u64) -> usize {
    let mut g = rng::stream(seed, 2);
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut fs: Vec<f64> = Vec::new();
    let uniform = |g: &mut rng::Rng| -> Vec<f64> { (0..dim).map(|_| g.gen_range(LOWER..UPPER)).collect() };
    for _ in 0..2 * dim + 2 {
        if t.done() {
            return 0;
        }
        let x = uniform(&mut g);
        fs.push(t.eval(&x));
        xs.push(x);
    }
    let mut theta: Option<Vec<f64>> = None;
    let mut since_fit = 0;
    while !t.done() {
        let xb = t.best_x.clone();
        let mut local: Vec<(f64, usize)> = (0..xs.len())
            .filter(|&i| fs[i].is_finite())
            .map(|i| (xs[i].iter().zip(&xb).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        if local.len() < 2 {
            let x = uniform(&mut g);
            fs.push(t.eval(&x));
            xs.push(x);
            continue;
        }
        local.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        local.truncate(cfg.gp_local_points);
        let lx: Vec<Vec<f64>> = local.iter().map(|&(_, i)| xs[i].clone()).collect();
        let ly: Vec<f64> = local.iter().map(|&(_, i)| (fs[i] + 1e-30).log10()).collect();
        let mean = ly.iter().sum::<f64>() / ly.len() as f64;
        let sd = (ly.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ly.len() as f64).sqrt() + 1e-9;
        let yn: Vec<f64> = ly.iter().map(|v| (v - mean) / sd).collect();

        if theta.is_none() || since_fit >= cfg.gp_refit_every {
            let ls: Vec<f64> = match &theta {
                Some(th) => th[..dim].to_vec(),
                None => vec![0.5f64.ln(); dim],
            };
            let mut th0 = ls;
            th0.push(0.0);
            th0.push(1e-4f64.ln());
            theta = Some(fit(&lx, &yn, th0, dim));
            since_fit = 0;
        }
        let th = theta.as_ref().unwrap();
        let Some(gp) = Gp::new(lx, &yn, th, dim) else {
            let x = uniform(&mut g);
            fs.push(t.eval(&x));
            xs.push(x);
            since_fit = cfg.gp_refit_every;
            continue;
        };
        let ls: Vec<f64> = th[..dim].iter().map(|l| l.exp()).collect();
        let n_uniform = cfg.gp_candidates / 4;
        let cands: Vec<Vec<f64>> = (0..cfg.gp_candidates)
            .map(|k| {
                if k < n_uniform {
                    uniform(&mut g)
                } else {
                    let s = SCALES[g.gen_range(0..SCALES.len())];
                    let mut x: Vec<f64> = xb
                        .iter()
                        .zip(&ls)
                        .map(|(b, l)| b + rng::gaussian(&mut g) * l * s)
                        .collect();
                    clip(&mut x);
                    x
                }
            })
            .collect();
        let best = yn.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let ei: Vec<f64> = cands
            .par_iter()
            .map(|c| {
                let (mu, sd) = gp.predict(c);
                expected_improvement(best, mu, sd)
            })
            .collect();
        let pick = ei
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
            .0;
        let x = cands[pick].clone();
        fs.push(t.eval(&x));
        xs.push(x);
        since_fit += 1;
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut g = rng::rng_from_seed(4);
        let x: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| g.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| (2.0 * p[0]).sin() + p[1] * p[2]).collect();
        let theta = vec![-0.3, 0.2, 0.5, 0.1, -3.0];
        let (_, grad) = nll(&x, &y, &theta, 3).unwrap();
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fd = (nll(&x, &y, &tp, 3).unwrap().0 - nll(&x, &y, &tm, 3).unwrap().0) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn fit_lowers_nll_and_interpolates() {
        let x: Vec<Vec<f64>> = (0..15).map(|i| vec![-1.0 + i as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin()).collect();
        let th0 = vec![0.0, 0.0, -2.0];
        let th = fit(&x, &y, th0.clone(), 1);
        assert!(nll(&x, &y, &th, 1).unwrap().0 < nll(&x, &y, &th0, 1).unwrap().0);
        let gp = Gp::new(x, &y, &th, 1).unwrap();
        let (mu, sd) = gp.predict(&[0.05]);
        assert!((mu - (0.15f64).sin()).abs() < 1e-2, "{mu}");
        assert!(sd < 0.1);
    }

    #[test]
    fn ei_limits() {
        assert!(expected_improvement(0.0, 5.0, 1e-6) < 1e-12);
        assert!((expected_improvement(0.0, -2.0, 1e-9) - 2.0).abs() < 1e-9);
        assert!((expected_improvement(0.0, 0.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
