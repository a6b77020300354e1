//! Training ensembles of (max-normalized spectrum, canonical coefficients)
//! pairs and their on-disk format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "EXDS" u32 version u32 n_samples u32 n_tip u32 n_sites u32 flags
//! f32 inputs [n_samples * n_tip]
//! f32 targets [n_samples * n_sites]
//! u64 meta_len, meta_len bytes of JSON
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::diagonalize;
use crate::error::{Error, Result};
use crate::geometry::{build_geometry, AggregateGeometry, GeometryConfig};
use crate::hamiltonian::{build_hamiltonian, sample_disorder, DisorderSpec};
use crate::nearfield::{add_noise_in_place, ProjectionMatrix, ScanConfig, TipScan};
use crate::rng;

pub const MAGIC: &[u8; 4] = b"EXDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Set when inputs carry measurement noise.
pub const FLAG_NOISY: u32 = 1;
/// Set when at least one realization had (near-)degenerate eigenvalues.
pub const FLAG_DEGENERATE: u32 = 2;

fn default_scan() -> ScanConfig {
    ScanConfig::default_line()
}
fn default_split() -> f64 {
    0.8
}

/// One disorder strength with its own realization count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tranche {
    #[serde(default)]
    pub sigma_d: f64,
    #[serde(default)]
    pub sigma_od: f64,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub geometry: GeometryConfig,
    /// Diagonal-disorder strengths, each run with `sigma_od = 0`.
    #[serde(default)]
    pub sigma_d_list: Vec<f64>,
    /// Off-diagonal-disorder strengths, each run with `sigma_d = 0`.
    #[serde(default)]
    pub sigma_od_list: Vec<f64>,
    pub realizations_per_sigma: usize,
    /// Extra tranches with explicit (sigma_d, sigma_od, realizations).
    #[serde(default)]
    pub tranches: Vec<Tranche>,
    #[serde(default = "default_scan")]
    pub scan: ScanConfig,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
}

impl EnsembleConfig {
    pub fn new(geometry: GeometryConfig, sigma_d_list: Vec<f64>, realizations_per_sigma: usize) -> Self {
        EnsembleConfig {
            geometry,
            sigma_d_list,
            sigma_od_list: Vec::new(),
            realizations_per_sigma,
            tranches: Vec::new(),
            scan: default_scan(),
            noise_sigma: 0.0,
            master_seed: 0,
            split_fraction: default_split(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations_per_sigma == 0 && self.tranches.is_empty() {
            return Err(Error::config("realizations_per_sigma must be >= 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        let t = self.all_tranches();
        if t.is_empty() {
            return Err(Error::config("no disorder strengths given"));
        }
        for tr in &t {
            DisorderSpec {
                sigma_d: tr.sigma_d,
                sigma_od: tr.sigma_od,
                seed: 0,
            }
            .validate()?;
            if tr.realizations == 0 {
                return Err(Error::config("tranche with zero realizations"));
            }
        }
        Ok(())
    }

    /// Lists expanded into tranches, in file order.
    pub fn all_tranches(&self) -> Vec<Tranche> {
        let r = self.realizations_per_sigma;
        let mut out: Vec<Tranche> = self
            .sigma_d_list
            .iter()
            .map(|&s| Tranche {
                sigma_d: s,
                sigma_od: 0.0,
                realizations: r,
            })
            .collect();
        out.extend(self.sigma_od_list.iter().map(|&s| Tranche {
            sigma_d: 0.0,
            sigma_od: s,
            realizations: r,
        }));
        out.extend(self.tranches.iter().copied());
        out
    }

    pub fn expected_samples(&self) -> Result<usize> {
        let n = self.geometry.n_sites();
        Ok(self.all_tranches().iter().map(|t| t.realizations * n).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sigma_d: f64,
    pub sigma_od: f64,
    pub realization: u32,
    /// Eigenstate index, ascending energy.
    pub state: u32,
    /// Disorder seed of the realization.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<EnsembleConfig>,
    samples: Vec<SampleMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub n_tip: usize,
    pub n_sites: usize,
    /// Row-major `n_samples x n_tip`.
    pub inputs: Vec<f32>,
    /// Row-major `n_samples x n_sites`.
    pub targets: Vec<f32>,
    pub meta: Vec<SampleMeta>,
    pub flags: u32,
    pub config: Option<EnsembleConfig>,
}

impl DataSet {
    pub fn empty(n_tip: usize, n_sites: usize) -> Self {
        DataSet {
            n_tip,
            n_sites,
            inputs: Vec::new(),
            targets: Vec::new(),
            meta: Vec::new(),
            flags: 0,
            config: None,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.n_tip..(i + 1) * self.n_tip]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * self.n_sites..(i + 1) * self.n_sites]
    }

    pub fn push(&mut self, input: &[f32], target: &[f32], meta: SampleMeta) {
        assert_eq!(input.len(), self.n_tip);
        assert_eq!(target.len(), self.n_sites);
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        self.meta.push(meta);
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DataSet {
        let mut out = DataSet {
            config: self.config.clone(),
            flags: self.flags,
            ..DataSet::empty(self.n_tip, self.n_sites)
        };
        out.inputs.reserve(indices.len() * self.n_tip);
        out.targets.reserve(indices.len() * self.n_sites);
        for &i in indices {
            out.push(self.input(i), self.target(i), self.meta[i]);
        }
        out
    }

    /// Concatenates sets with identical shapes. The result carries no config.
    pub fn concat(parts: &[DataSet]) -> Result<DataSet> {
        let first = parts.first().ok_or_else(|| Error::input("nothing to concatenate"))?;
        let mut out = DataSet::empty(first.n_tip, first.n_sites);
        for p in parts {
            if p.n_tip != first.n_tip || p.n_sites != first.n_sites {
                return Err(Error::input(format!(
                    "shape mismatch: ({}, {}) vs ({}, {})",
                    p.n_tip, p.n_sites, first.n_tip, first.n_sites
                )));
            }
            out.inputs.extend_from_slice(&p.inputs);
            out.targets.extend_from_slice(&p.targets);
            out.meta.extend_from_slice(&p.meta);
            out.flags |= p.flags;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&MetaBlock {
            config: self.config.clone(),
            samples: self.meta.clone(),
        })?;
        let n = self.n_samples();
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (self.inputs.len() + self.targets.len()) + 8 + meta.len());
        buf.extend_from_slice(MAGIC);
        for v in [VERSION, to_u32(n)?, to_u32(self.n_tip)?, to_u32(self.n_sites)?, self.flags] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.inputs.iter().chain(&self.targets) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        Ok(buf)
    }

    pub fn from_bytes(b: &[u8]) -> Result<DataSet> {
        let mut r = Reader { b, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "bad magic, not an EXDS file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let n_tip = r.u32()? as usize;
        let n_sites = r.u32()? as usize;
        let flags = r.u32()?;
        let n_in = n
            .checked_mul(n_tip)
            .ok_or_else(|| Error::format(8, "sample count overflows"))?;
        let n_out = n
            .checked_mul(n_sites)
            .ok_or_else(|| Error::format(8, "sample count overflows"))?;
        let inputs = r.f32s(n_in)?;
        let targets = r.f32s(n_out)?;
        let meta_at = r.pos as u64;
        let len = r.u64()?;
        let len = usize::try_from(len).map_err(|_| Error::format(meta_at, "meta length overflows"))?;
        let raw = r.take(len)?;
        let meta: MetaBlock =
            serde_json::from_slice(raw).map_err(|e| Error::format(meta_at + 8, format!("meta block: {e}")))?;
        if meta.samples.len() != n {
            return Err(Error::format(
                meta_at + 8,
                format!("meta has {} entries, header says {n}", meta.samples.len()),
            ));
        }
        if r.pos != b.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after meta block"));
        }
        Ok(DataSet {
            n_tip,
            n_sites,
            inputs,
            targets,
            meta: meta.samples,
            flags,
            config: meta.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DataSet> {
        DataSet::from_bytes(&fs::read(path)?)
    }
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::input(format!("{n} does not fit the u32 header field")))
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.b.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.b.len() - self.pos),
            )
        })?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, "length overflows"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Seed of realization `r` in tranche `t`; independent of execution order.
pub fn realization_seed(master: u64, tranche: usize, realization: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(master, tranche as u64), realization as u64)
}

/// Divides by the maximum; errors if the maximum is not positive.
pub fn max_normalize(values: &[f64]) -> Result<Vec<f32>> {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if !(max.is_finite() && max > 0.0) {
        return Err(Error::DegenerateOutput { norm: max });
    }
    Ok(values.iter().map(|v| (v / max) as f32).collect())
}

/// Spectra of every eigenstate of one realization, pushed into `out`.
fn realization_samples(
    geometry: &AggregateGeometry,
    proj: &ProjectionMatrix,
    tranche: &Tranche,
    r: usize,
    seed: u64,
    noise_sigma: f64,
    out: &mut DataSet,
) -> Result<bool> {
    let spec = DisorderSpec {
        sigma_d: tranche.sigma_d,
        sigma_od: tranche.sigma_od,
        seed,
    };
    let dis = sample_disorder(&spec, geometry)?;
    let h = build_hamiltonian(geometry, &dis, 0.0)?;
    let es = diagonalize(&h)?;
    let mut spec_buf = vec![0.0; proj.n_tip];
    for (l, c) in es.coefficients.iter().enumerate() {
        proj.spectrum_into(c, &mut spec_buf);
        if noise_sigma > 0.0 {
            let mut g = rng::rng_from_seed(rng::derive_seed(seed ^ 0x6e6f_6973_65, l as u64));
            add_noise_in_place(&mut spec_buf, noise_sigma, &mut g);
        }
        let input = max_normalize(&spec_buf)?;
        let target: Vec<f32> = c.iter().map(|v| *v as f32).collect();
        out.push(
            &input,
            &target,
            SampleMeta {
                sigma_d: tranche.sigma_d,
                sigma_od: tranche.sigma_od,
                realization: r as u32,
                state: l as u32,
                seed,
                degenerate: es.degenerate,
            },
        );
    }
    Ok(es.degenerate)
}

/// Builds the full ensemble. Realizations run in parallel; the output order
/// is (tranche, realization, state) regardless of scheduling.
pub fn generate_ensemble(cfg: &EnsembleConfig) -> Result<DataSet> {
    cfg.validate()?;
    let geometry = build_geometry(&cfg.geometry)?;
    let scan = TipScan::build(&cfg.scan, &geometry)?;
    let proj = ProjectionMatrix::new(&geometry, &scan)?;
    let tranches = cfg.all_tranches();
    let jobs: Vec<(usize, usize)> = tranches
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| (0..tr.realizations).map(move |r| (t, r)))
        .collect();
    let parts: Vec<DataSet> = jobs
        .par_iter()
        .map(|&(t, r)| {
            let mut part = DataSet::empty(scan.len(), geometry.len());
            let seed = realization_seed(cfg.master_seed, t, r);
            if realization_samples(&geometry, &proj, &tranches[t], r, seed, cfg.noise_sigma, &mut part)? {
                log::warn!("tranche {t} realization {r}: near-degenerate eigenvalues");
                part.flags |= FLAG_DEGENERATE;
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;
    let mut ds = DataSet::concat(&parts)?;
    if cfg.noise_sigma > 0.0 {
        ds.flags |= FLAG_NOISY;
    }
    ds.config = Some(cfg.clone());
    Ok(ds)
}

/// All eigenstates of the disorder-free aggregate, one sample each.
pub fn clean_eigenstates(geometry: &AggregateGeometry, scan: &TipScan) -> Result<DataSet> {
    let proj = ProjectionMatrix::new(geometry, scan)?;
    let mut ds = DataSet::empty(scan.len(), geometry.len());
    let tranche = Tranche {
        sigma_d: 0.0,
        sigma_od: 0.0,
        realizations: 1,
    };
    realization_samples(geometry, &proj, &tranche, 0, 0, 0.0, &mut ds)?;
    Ok(ds)
}

/// Random disjoint partition into `floor(fraction n)` and the rest. Each
/// part keeps the original sample order.
pub fn split(ds: &DataSet, fraction: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = ds.n_samples();
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 || k == n {
        return Err(Error::config(format!(
            "split of {n} samples at {fraction} leaves an empty partition"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from_seed(seed));
    let mut a = idx[..k].to_vec();
    let mut b = idx[k..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((ds.subset(&a), ds.subset(&b)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n_tip: usize,
    pub n_sites: usize,
    pub files: Vec<ManifestEntry>,
    pub config: serde_json::Value,
}

impl Manifest {
    /// Describes already-written dataset files in `dir`.
    pub fn describe(dir: &Path, files: &[(&str, &DataSet)], config: serde_json::Value) -> Result<Manifest> {
        let first = files.first().ok_or_else(|| Error::input("manifest without files"))?.1;
        let mut entries = Vec::new();
        for (name, ds) in files {
            let bytes = fs::read(dir.join(name))?;
            entries.push(ManifestEntry {
                file: name.to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                n_samples: ds.n_samples(),
            });
        }
        Ok(Manifest {
            format: "EXDS".into(),
            version: VERSION,
            n_tip: first.n_tip,
            n_sites: first.n_sites,
            files: entries,
            config,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    /// Recomputes every checksum; returns the names that do not match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in &self.files {
            if sha256_file(dir.join(&e.file))? != e.sha256 {
                bad.push(e.file.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::canonicalize_sign;

    fn small_cfg() -> EnsembleConfig {
        let mut c = EnsembleConfig::new(GeometryConfig::chain(6), vec![0.02, 0.3], 3);
        c.sigma_od_list = vec![0.1];
        c.scan = ScanConfig::line(32, 12.0, 2.0);
        c.master_seed = 11;
        c
    }

    #[test]
    fn sample_count_matches_recipe() {
        let cfg = small_cfg();
        let ds = generate_ensemble(&cfg).unwrap();
        assert_eq!(ds.n_samples(), 3 * 3 * 6);
        assert_eq!(cfg.expected_samples().unwrap(), ds.n_samples());
        assert_eq!(ds.inputs.len(), ds.n_samples() * 32);
        let desk = EnsembleConfig::new(GeometryConfig::chain(20), vec![0.02, 0.04, 0.06, 0.08], 100);
        assert_eq!(desk.expected_samples().unwrap(), 8000);
        let paper2d = EnsembleConfig::new(GeometryConfig::array2d(10, 5), vec![0.02, 0.04, 0.06, 0.08], 2000);
        assert_eq!(paper2d.expected_samples().unwrap(), 400_000);
    }

    #[test]
    fn stored_rows_satisfy_invariants() {
        let ds = generate_ensemble(&small_cfg()).unwrap();
        for i in 0..ds.n_samples() {
            let x = ds.input(i);
            assert_eq!(x.iter().fold(f32::MIN, |m, v| m.max(*v)), 1.0);
            let t = ds.target(i);
            let nrm: f64 = t.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((nrm - 1.0).abs() < 1e-6);
            let t64: Vec<f64> = t.iter().map(|v| *v as f64).collect();
            assert_eq!(canonicalize_sign(&t64).unwrap(), t64);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_ensemble(&small_cfg()).unwrap().to_bytes().unwrap();
        let b = generate_ensemble(&small_cfg()).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
        let mut other = small_cfg();
        other.master_seed = 12;
        assert_ne!(generate_ensemble(&other).unwrap().inputs, generate_ensemble(&small_cfg()).unwrap().inputs);
    }

    #[test]
    fn generation_independent_of_thread_count() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| generate_ensemble(&small_cfg()).unwrap());
        let b = three.install(|| generate_ensemble(&small_cfg()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn realization_order_does_not_matter() {
        // rebuilding a single realization by hand reproduces its rows
        let cfg = small_cfg();
        let ds = generate_ensemble(&cfg).unwrap();
        let g = build_geometry(&cfg.geometry).unwrap();
        let scan = TipScan::build(&cfg.scan, &g).unwrap();
        let proj = ProjectionMatrix::new(&g, &scan).unwrap();
        let tr = cfg.all_tranches()[1];
        let mut part = DataSet::empty(32, 6);
        realization_samples(&g, &proj, &tr, 2, realization_seed(11, 1, 2), 0.0, &mut part).unwrap();
        let start = (3 + 2) * 6;
        assert_eq!(part.inputs[..], ds.inputs[start * 32..(start + 6) * 32]);
    }

    #[test]
    fn noisy_inputs_are_normalized_and_flagged() {
        let mut cfg = small_cfg();
        cfg.noise_sigma = 0.1;
        let ds = generate_ensemble(&cfg).unwrap();
        assert_eq!(ds.flags & FLAG_NOISY, FLAG_NOISY);
        let clean = generate_ensemble(&small_cfg()).unwrap();
        assert_eq!(clean.targets, ds.targets);
        assert_ne!(clean.inputs, ds.inputs);
        for i in 0..ds.n_samples() {
            assert_eq!(ds.input(i).iter().fold(f32::MIN, |m, v| m.max(*v)), 1.0);
        }
    }

    #[test]
    fn split_partitions() {
        let ds = generate_ensemble(&small_cfg()).unwrap();
        let (a, b) = split(&ds, 0.8, 5).unwrap();
        assert_eq!(a.n_samples(), (0.8 * 54.0f64).floor() as usize);
        assert_eq!(a.n_samples() + b.n_samples(), 54);
        let key = |m: &SampleMeta| (m.seed, m.state);
        let mut all: Vec<_> = a.meta.iter().chain(&b.meta).map(key).collect();
        all.sort_unstable();
        let mut orig: Vec<_> = ds.meta.iter().map(key).collect();
        orig.sort_unstable();
        assert_eq!(all, orig);
        let (a2, _) = split(&ds, 0.8, 5).unwrap();
        assert_eq!(a, a2);
        let ten = ds.subset(&(0..10).collect::<Vec<_>>());
        let (x, y) = split(&ten, 0.8, 1).unwrap();
        assert_eq!((x.n_samples(), y.n_samples()), (8, 2));
        assert!(split(&ten, 0.05, 1).is_err());
        assert!(split(&ten, 1.0, 1).is_err());
    }

    #[test]
    fn file_roundtrip_and_size() {
        let ds = generate_ensemble(&small_cfg()).unwrap();
        let ds = ds.subset(&(0..10).collect::<Vec<_>>());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.exds");
        ds.save(&p).unwrap();
        let back = DataSet::load(&p).unwrap();
        assert_eq!(back, ds);
        let bytes = fs::read(&p).unwrap();
        let meta_len = u64::from_le_bytes(bytes[HEADER_LEN + 4 * 10 * 38..][..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 10 * (32 + 6) + 8 + meta_len);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_give_format_errors() {
        let ds = generate_ensemble(&small_cfg()).unwrap().subset(&[0, 1, 2]);
        let good = ds.to_bytes().unwrap();
        let mut bad = good.clone();
        bad[1] = b'Y';
        assert!(matches!(DataSet::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(DataSet::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        for cut in [0, 3, 10, 30, good.len() - 1] {
            assert!(matches!(DataSet::from_bytes(&good[..cut]), Err(Error::Format { .. })));
        }
        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(DataSet::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        let last = bad.len() - 2;
        bad[last] = b'#';
        assert!(matches!(DataSet::from_bytes(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_checksums() {
        let ds = generate_ensemble(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path().join("a.exds")).unwrap();
        let m = Manifest::describe(dir.path(), &[("a.exds", &ds)], serde_json::json!({"k": 1})).unwrap();
        m.write(dir.path().join("manifest.json")).unwrap();
        assert!(m.verify(dir.path()).unwrap().is_empty());
        let mut b = fs::read(dir.path().join("a.exds")).unwrap();
        b[100] ^= 1;
        fs::write(dir.path().join("a.exds"), b).unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.exds".to_string()]);
    }

    #[test]
    fn clean_eigenstates_cover_all_states() {
        let g = build_geometry(&GeometryConfig::chain(5)).unwrap();
        let scan = TipScan::build(&ScanConfig::line(40, 10.0, 2.0), &g).unwrap();
        let ds = clean_eigenstates(&g, &scan).unwrap();
        assert_eq!(ds.n_samples(), 5);
        assert_eq!(ds.meta.iter().map(|m| m.state).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = small_cfg();
        c.split_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = small_cfg();
        c.realizations_per_sigma = 0;
        assert!(c.validate().is_err());
        let r: std::result::Result<EnsembleConfig, _> =
            serde_json::from_str(r#"{"geometry":{"kind":"chain","n":3},"realizations_per_sigma":1,"bogus":1}"#);
        assert!(r.is_err());
    }
}
