//! Peak slicing: integrate the spatio-spectral map over tip positions, locate
//! frequency maxima, and cut the spatial profile at each one.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::map::{integrated_with, prepare, slice_with};
use super::LocalFieldSystem;
use crate::error::{Error, Result};
use crate::nearfield::{linspace, Spectrum, TipScan};

fn default_prominence() -> f64 {
    1e-3
}
fn default_min_separation() -> usize {
    2
}
fn default_n_freq() -> usize {
    2000
}
fn default_span() -> f64 {
    50.0
}

/// Peak acceptance rule and default frequency grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakConfig {
    /// Minimum prominence as a fraction of the global maximum.
    #[serde(default = "default_prominence")]
    pub rel_prominence: f64,
    /// Minimum distance between accepted peaks in grid steps.
    #[serde(default = "default_min_separation")]
    pub min_separation: usize,
    #[serde(default = "default_n_freq")]
    pub n_freq: usize,
    /// Grid padding beyond the outermost eigenfrequencies, in units of gamma_m.
    #[serde(default = "default_span")]
    pub span_gammas: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            rel_prominence: default_prominence(),
            min_separation: default_min_separation(),
            n_freq: default_n_freq(),
            span_gammas: default_span(),
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_prominence.is_finite() && self.rel_prominence >= 0.0) {
            return Err(Error::config("rel_prominence must be >= 0"));
        }
        if self.n_freq < 3 {
            return Err(Error::config("n_freq must be >= 3"));
        }
        if !(self.span_gammas.is_finite() && self.span_gammas >= 0.0) {
            return Err(Error::config("span_gammas must be >= 0"));
        }
        Ok(())
    }

    /// Uniform grid over `[min E - span g, max E + span g]` of the ideal
    /// aggregate, with `g` the largest molecular damping.
    pub fn frequency_grid(&self, sys: &LocalFieldSystem) -> Result<Vec<f64>> {
        let es = sys.ideal_eigensystem()?;
        let g = sys.resonances.iter().fold(0.0f64, |m, r| m.max(r.gamma_m));
        let lo = es.energies[0] - self.span_gammas * g;
        let hi = es.energies[es.n() - 1] + self.span_gammas * g;
        Ok(linspace(lo, hi, self.n_freq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
}

/// Local maxima with topographic prominence `>= rel_prominence * max(y)`,
/// thinned so that no two survivors are closer than `min_separation` samples
/// (taller peaks win). Plateaus report their left edge. Sorted by index.
pub fn find_peaks(y: &[f64], rel_prominence: f64, min_separation: usize) -> Vec<Peak> {
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let gmax = y.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let threshold = rel_prominence * gmax;
    let mut cands = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                cands.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let mut peaks: Vec<Peak> = cands
        .into_iter()
        .map(|p| Peak {
            index: p,
            height: y[p],
            prominence: prominence(y, p),
        })
        .filter(|p| p.prominence >= threshold)
        .collect();

    if min_separation > 1 && peaks.len() > 1 {
        let mut order: Vec<usize> = (0..peaks.len()).collect();
        order.sort_by(|&a, &b| peaks[b].height.total_cmp(&peaks[a].height).then(a.cmp(&b)));
        let mut keep = vec![true; peaks.len()];
        for &a in &order {
            if !keep[a] {
                continue;
            }
            for (b, k) in keep.iter_mut().enumerate() {
                if b != a && *k && peaks[a].index.abs_diff(peaks[b].index) < min_separation {
                    *k = false;
                }
            }
        }
        let mut it = keep.into_iter();
        peaks.retain(|_| it.next().unwrap());
    }
    peaks
}

fn prominence(y: &[f64], p: usize) -> f64 {
    let h = y[p];
    let mut left_min = h;
    for k in (0..p).rev() {
        if y[k] > h {
            break;
        }
        left_min = left_min.min(y[k]);
    }
    let mut right_min = h;
    for v in &y[p + 1..] {
        if *v > h {
            break;
        }
        right_min = right_min.min(*v);
    }
    h - left_min.max(right_min)
}

#[derive(Debug, Clone)]
pub struct PeakSlice {
    pub omega: f64,
    /// Spatially integrated absorption at the peak.
    pub height: f64,
    pub prominence: f64,
    /// `A(omega, R_tip)` over the scan.
    pub spectrum: Spectrum,
}

/// Integrated spectrum plus the slices cut from it.
#[derive(Debug, Clone)]
pub struct PeakAnalysis {
    pub omegas: Vec<f64>,
    pub integrated: Vec<f64>,
    pub slices: Vec<PeakSlice>,
}

pub fn peak_analysis(
    sys: &LocalFieldSystem,
    scan: Arc<TipScan>,
    omegas: &[f64],
    cfg: &PeakConfig,
) -> Result<PeakAnalysis> {
    cfg.validate()?;
    let (solver, projs) = prepare(sys, &scan)?;
    let integrated = integrated_with(&solver, &projs, omegas)?;
    let peaks = find_peaks(&integrated, cfg.rel_prominence, cfg.min_separation);
    let mut slices = Vec::with_capacity(peaks.len());
    for p in peaks {
        let omega = omegas[p.index];
        slices.push(PeakSlice {
            omega,
            height: p.height,
            prominence: p.prominence,
            spectrum: Spectrum {
                values: slice_with(&solver, &projs, omega)?,
                scan: scan.clone(),
                state_index: None,
                noise_sigma: 0.0,
            },
        });
    }
    Ok(PeakAnalysis {
        omegas: omegas.to_vec(),
        integrated,
        slices,
    })
}

/// Slices at every clearly identified peak, lowest frequency first.
pub fn extract_peak_slices(
    sys: &LocalFieldSystem,
    scan: Arc<TipScan>,
    omegas: &[f64],
    cfg: &PeakConfig,
) -> Result<Vec<PeakSlice>> {
    Ok(peak_analysis(sys, scan, omegas, cfg)?.slices)
}
