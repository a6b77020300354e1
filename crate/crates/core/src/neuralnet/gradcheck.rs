//! Central finite-difference check of the analytic gradient.

use super::network::Network;
use crate::error::Result;

/// Worst relative discrepancy over the checked parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub checked: usize,
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences of step `h` at the given parameter indices (all if `None`).
///
/// Entries are compared relative to `max(|fd|, |analytic|, 1e-3 g_inf)`,
/// where `g_inf` is the largest analytic entry, so that entries many orders
/// below the gradient scale are judged by absolute error.
pub fn gradient_check(
    net: &Network<f64>,
    x: &[f64],
    targets: &[f64],
    bsz: usize,
    h: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheck> {
    let (_, g) = net.loss_and_gradient(x, targets, bsz)?;
    let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..net.n_params()).collect();
            &all
        }
    };
    let mut probe = net.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        checked: idx.len(),
    };
    for &i in idx {
        let p0 = probe.params[i];
        probe.params[i] = p0 + h;
        let lp = probe.mean_loss(x, targets, bsz)?;
        probe.params[i] = p0 - h;
        let lm = probe.mean_loss(x, targets, bsz)?;
        probe.params[i] = p0;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(1e-3 * g_inf).max(1e-300);
        let rel = (fd - g[i]).abs() / denom;
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_param = i;
        }
    }
    Ok(out)
}
