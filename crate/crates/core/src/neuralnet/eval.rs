//! Prediction and loss statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::loss::{loss, normalize_output};
use super::network::Network;
use crate::dataset::{max_normalize, DataSet, SampleMeta};
use crate::eigen::canonicalize_sign;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Unit-norm, sign-canonical coefficients.
    pub coefficients: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// Predicts coefficients for one raw spectrum (normalized to unit maximum
/// first) and scores them against `target` if given.
pub fn predict(net: &Network<f32>, spectrum: &[f64], target: Option<&[f64]>) -> Result<Prediction> {
    if spectrum.len() != net.input_len() {
        return Err(Error::input(format!(
            "spectrum has {} values, network expects {}",
            spectrum.len(),
            net.input_len()
        )));
    }
    let x = max_normalize(spectrum)?;
    let raw: Vec<f64> = net.forward(&x, 1)?.iter().map(|v| *v as f64).collect();
    let c = canonicalize_sign(&normalize_output(&raw)?)?;
    let loss = match target {
        Some(t) => Some(loss(&normalize_output(t)?, &c)?),
        None => None,
    };
    Ok(Prediction { coefficients: c, loss })
}

/// Normalized, sign-canonical predictions for already-normalized rows.
pub fn predict_batch(net: &Network<f32>, inputs: &[f32], bsz: usize) -> Result<Vec<Vec<f64>>> {
    let raw = net.forward(inputs, bsz)?;
    raw.chunks_exact(net.output_dim())
        .map(|r| {
            let r: Vec<f64> = r.iter().map(|v| *v as f64).collect();
            canonicalize_sign(&normalize_output(&r)?)
        })
        .collect()
}

pub fn dataset_losses(net: &Network<f32>, ds: &DataSet) -> Result<Vec<f64>> {
    if ds.n_tip != net.input_len() || ds.n_sites != net.output_dim() {
        return Err(Error::input(format!(
            "dataset shape ({}, {}) does not match network ({}, {})",
            ds.n_tip,
            ds.n_sites,
            net.input_len(),
            net.output_dim()
        )));
    }
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    net.sample_losses(&ds.inputs, &ds.targets, ds.n_samples())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    if v.is_empty() {
        return Summary {
            count: 0,
            mean: f64::NAN,
            median: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        };
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    Summary {
        count: n,
        mean: s.iter().sum::<f64>() / n as f64,
        median,
        min: s[0],
        max: s[n - 1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Log-spaced histogram over `[10^lo_exp, 10^hi_exp)`; losses below the range
/// land in the first bin, above it in the last.
pub fn loss_histogram(losses: &[f64], lo_exp: i32, hi_exp: i32, bins_per_decade: usize) -> Vec<HistBin> {
    let nb = ((hi_exp - lo_exp).max(1) as usize) * bins_per_decade.max(1);
    let step = (hi_exp - lo_exp) as f64 / nb as f64;
    let mut bins: Vec<HistBin> = (0..nb)
        .map(|i| HistBin {
            lo: 10f64.powf(lo_exp as f64 + i as f64 * step),
            hi: 10f64.powf(lo_exp as f64 + (i + 1) as f64 * step),
            count: 0,
        })
        .collect();
    for l in losses {
        let k = if *l > 0.0 {
            ((l.log10() - lo_exp as f64) / step).floor()
        } else {
            -1.0
        };
        let k = k.clamp(0.0, (nb - 1) as f64) as usize;
        bins[k].count += 1;
    }
    bins
}

pub fn write_histogram_csv<W: Write>(bins: &[HistBin], mut w: W) -> Result<()> {
    let total: usize = bins.iter().map(|b| b.count).sum();
    writeln!(w, "bin_lo,bin_hi,count,fraction")?;
    for b in bins {
        let f = if total > 0 { b.count as f64 / total as f64 } else { 0.0 };
        writeln!(w, "{:e},{:e},{},{}", b.lo, b.hi, b.count, f)?;
    }
    Ok(())
}

/// One row per sample: `index,sigma_d,sigma_od,realization,state,loss`.
pub fn write_losses_csv<W: Write>(meta: &[SampleMeta], losses: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "index,sigma_d,sigma_od,realization,state,loss")?;
    for (i, (m, l)) in meta.iter().zip(losses).enumerate() {
        writeln!(w, "{i},{},{},{},{},{:e}", m.sigma_d, m.sigma_od, m.realization, m.state, l)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateLoss {
    pub state: usize,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

/// Loss statistics grouped by eigenstate index.
pub fn per_state_losses(meta: &[SampleMeta], losses: &[f64]) -> Vec<StateLoss> {
    let n = meta.iter().map(|m| m.state as usize + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n];
    for (m, l) in meta.iter().zip(losses) {
        groups[m.state as usize].push(*l);
    }
    groups
        .iter()
        .enumerate()
        .map(|(state, g)| {
            let s = summarize(g);
            StateLoss {
                state,
                count: s.count,
                mean: s.mean,
                median: s.median,
            }
        })
        .collect()
}

pub fn write_state_losses_csv<W: Write>(rows: &[StateLoss], mut w: W) -> Result<()> {
    writeln!(w, "state,count,mean_loss,median_loss")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e}", r.state, r.count, r.mean, r.median)?;
    }
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input("pearson needs two series of equal length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain("constant series has no correlation".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_and_histogram() {
        let s = summarize(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.count, s.median, s.min, s.max), (4, 2.5, 1.0, 10.0));
        assert_eq!(s.mean, 4.0);
        let h = loss_histogram(&[1e-9, 2e-4, 3e-4, 0.4, 7.0, 0.0], -6, 0, 1);
        assert_eq!(h.len(), 6);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 0, 2, 0, 0, 2]);
        assert!((h[2].lo - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).is_err());
        assert!(pearson(&a, &[1.0]).is_err());
    }

    #[test]
    fn per_state_grouping() {
        let m = |state| SampleMeta {
            sigma_d: 0.0,
            sigma_od: 0.0,
            realization: 0,
            state,
            seed: 0,
            degenerate: false,
        };
        let rows = per_state_losses(&[m(0), m(1), m(0), m(1)], &[0.1, 0.2, 0.3, 0.6]);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].mean - 0.2).abs() < 1e-15);
        assert!((rows[1].median - 0.4).abs() < 1e-15);
    }
}
