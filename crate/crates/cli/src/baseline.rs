use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use excirec_core::baseline::{minimize, minimize_fn, BaselineProblem, BaselineResult, Budget, Method, OptimizerSettings};
use excirec_core::nearfield::{ScanConfig, TipScan};
use excirec_core::rng::derive_seed;
use excirec_core::{build_geometry, diagonalize, hamiltonian::clean_hamiltonian, GeometryConfig};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError};
use crate::output::{read_spectrum_csv, Out};
use crate::NonConvergence;

fn d_scan() -> ScanConfig {
    ScanConfig::line(400, 40.0, 2.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    /// Spectra of clean eigenstates; `states` empty means all.
    Eigenstates {
        geometry: GeometryConfig,
        #[serde(default = "d_scan")]
        scan: ScanConfig,
        #[serde(default)]
        states: Vec<usize>,
    },
    /// A measured spectrum; the last CSV column is used.
    SpectrumFile {
        geometry: GeometryConfig,
        #[serde(default = "d_scan")]
        scan: ScanConfig,
        path: PathBuf,
    },
    /// `sum w_i (x_i - m_i)^2`, a smoke test for the optimizers.
    Quadratic { minimum: Vec<f64>, weights: Vec<f64> },
}

fn d_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn d_iter() -> usize {
    1000
}
fn d_target() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub problem: Problem,
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "d_iter")]
    pub max_iterations: usize,
    #[serde(default = "d_target")]
    pub target_cost: f64,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Serialize)]
struct Run {
    /// Eigenstate index, absent for other problems.
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<usize>,
    #[serde(flatten)]
    result: BaselineResult,
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = config::load::<BaselineConfig>(path)?;
    let cfg = &loaded.config;
    let seed = config::effective_seed(cfg.master_seed)?;
    cfg.settings
        .validate()
        .map_err(|e| ConfigError::at("/settings", e.to_string()))?;
    if cfg.methods.is_empty() {
        return Err(ConfigError::at("/methods", "no methods given").into());
    }
    if cfg.max_iterations == 0 {
        return Err(ConfigError::at("/max_iterations", "must be >= 1").into());
    }
    if !(cfg.target_cost >= 0.0) {
        return Err(ConfigError::at("/target_cost", "must be >= 0").into());
    }
    let out = Out::create(config::out_dir(&loaded, out, cfg.out_dir.as_deref())?)?;

    let mut runs = Vec::new();
    match &cfg.problem {
        Problem::Eigenstates { geometry, scan, states } => {
            let geom = build_geometry(geometry)?;
            let tip = TipScan::build(scan, &geom)?;
            let es = diagonalize(&clean_hamiltonian(&geom))?;
            let states: Vec<usize> = if states.is_empty() {
                (0..geom.len()).collect()
            } else {
                states.clone()
            };
            for (i, &l) in states.iter().enumerate() {
                if l >= geom.len() {
                    return Err(ConfigError::at(
                        format!("/problem/states/{i}"),
                        format!("state {l} out of range for {} sites", geom.len()),
                    )
                    .into());
                }
            }
            for l in states {
                let mut p = BaselineProblem::from_state(&geom, &tip, &es.coefficients[l])?;
                p.max_iterations = cfg.max_iterations;
                p.target_cost = cfg.target_cost;
                for &m in &cfg.methods {
                    let r = minimize(&p, m, derive_seed(seed, l as u64), &cfg.settings)?;
                    report(Some(l), &r);
                    runs.push(Run { state: Some(l), result: r });
                }
            }
        }
        Problem::SpectrumFile { geometry, scan, path } => {
            let geom = build_geometry(geometry)?;
            let tip = TipScan::build(scan, &geom)?;
            let target = read_spectrum_csv(&loaded.resolve(path))?;
            let mut p = BaselineProblem::new(&geom, &tip, target)?;
            p.max_iterations = cfg.max_iterations;
            p.target_cost = cfg.target_cost;
            for &m in &cfg.methods {
                let r = minimize(&p, m, seed, &cfg.settings)?;
                report(None, &r);
                runs.push(Run { state: None, result: r });
            }
        }
        Problem::Quadratic { minimum, weights } => {
            if minimum.is_empty() || minimum.len() != weights.len() {
                return Err(ConfigError::at("/problem/weights", "need one weight per coordinate").into());
            }
            let f = |x: &[f64]| -> f64 {
                x.iter()
                    .zip(minimum)
                    .zip(weights)
                    .map(|((x, m), w)| w * (x - m) * (x - m))
                    .sum()
            };
            let budget = Budget {
                max_evaluations: cfg.max_iterations,
                target: cfg.target_cost,
            };
            for &m in &cfg.methods {
                let r = minimize_fn(&f, minimum.len(), m, budget, &cfg.settings, seed)?;
                let r = BaselineResult {
                    method: m,
                    seed,
                    iterations: r.evaluations,
                    best_cost: r.value,
                    converged: r.converged,
                    restarts: r.restarts,
                    candidate: r.x,
                    loss: None,
                    trace: r.trace,
                };
                report(None, &r);
                runs.push(Run { state: None, result: r });
            }
        }
    }

    out.write_json("results.json", &runs)?;
    out.write_with("summary.csv", |w| {
        writeln!(w, "state,method,seed,iterations,best_cost,converged,restarts,loss")?;
        for r in &runs {
            let s = r.state.map_or(String::new(), |s| s.to_string());
            let x = &r.result;
            let loss = x.loss.map_or(String::new(), |l| format!("{l:e}"));
            writeln!(
                w,
                "{s},{},{},{},{:e},{},{},{loss}",
                x.method.name(),
                x.seed,
                x.iterations,
                x.best_cost,
                x.converged,
                x.restarts
            )?;
        }
        Ok(())
    })?;
    let failed = runs.iter().filter(|r| !r.result.converged).count();
    if failed > 0 {
        return Err(NonConvergence(format!("{failed} of {} runs missed the target cost", runs.len())).into());
    }
    Ok(())
}

fn report(state: Option<usize>, r: &BaselineResult) {
    let s = state.map_or(String::new(), |s| format!("state {s:2} "));
    println!(
        "{s}{:<24} {:5} evals  cost {:.3e}  {}",
        r.method.name(),
        r.iterations,
        r.best_cost,
        if r.converged { "converged" } else { "not converged" }
    );
}
