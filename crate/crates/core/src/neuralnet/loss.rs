//! Output normalization and the sign-resolved loss.

use super::real::Real;
use crate::error::{Error, Result};

/// Raw outputs below this norm cannot be normalized.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// `raw / |raw|`.
pub fn normalize_output(raw: &[f64]) -> Result<Vec<f64>> {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > MIN_OUTPUT_NORM) {
        return Err(Error::DegenerateOutput { norm: n });
    }
    Ok(raw.iter().map(|v| v / n).collect())
}

/// `min_s (1/4) sum_m (c_m - s p_m)^2`; for unit vectors this equals
/// `(1 - |<c, p>|) / 2` and lies in `[0, 0.5]`.
pub fn loss(c_true: &[f64], c_pre: &[f64]) -> Result<f64> {
    if c_true.len() != c_pre.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            c_true.len(),
            c_pre.len()
        )));
    }
    let dot: f64 = c_true.iter().zip(c_pre).map(|(a, b)| a * b).sum();
    let s = if dot >= 0.0 { 1.0 } else { -1.0 };
    Ok(0.25 * c_true.iter().zip(c_pre).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>())
}

/// Loss of the normalized output of `raw` against `target`, with the
/// gradient w.r.t. `raw` written into `d`. The chosen sign is held fixed.
pub(crate) fn loss_and_raw_grad<T: Real>(raw: &[T], target: &[T], d: &mut [T]) -> Result<f64> {
    let n = raw.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
    if !(n > MIN_OUTPUT_NORM) {
        return Err(Error::DegenerateOutput { norm: n });
    }
    let mut dot = 0.0;
    for (r, c) in raw.iter().zip(target) {
        dot += c.to_f64() * r.to_f64() / n;
    }
    let s = if dot >= 0.0 { 1.0 } else { -1.0 };
    let mut l = 0.0;
    for ((r, c), g) in raw.iter().zip(target).zip(d.iter_mut()) {
        let p = r.to_f64() / n;
        let c = c.to_f64();
        l += (c - s * p).powi(2);
        *g = T::from_f64(-s * (c - p * dot) / (2.0 * n));
    }
    Ok(0.25 * l)
}
