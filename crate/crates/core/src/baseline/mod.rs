//! Coefficient reconstruction by black-box minimization of the spectrum
//! mismatch.

mod de;
mod gp;
mod nelder_mead;

use serde::{Deserialize, Serialize};

use crate::eigen::canonicalize_sign;
use crate::error::{Error, Result};
use crate::geometry::AggregateGeometry;
use crate::nearfield::{ProjectionMatrix, TipScan};
use crate::neuralnet::{loss, normalize_output};

pub const LOWER: f64 = -1.0;
pub const UPPER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NelderMead,
    DifferentialEvolution,
    GpSurrogate,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::NelderMead, Method::DifferentialEvolution, Method::GpSurrogate];

    pub fn name(self) -> &'static str {
        match self {
            Method::NelderMead => "nelder_mead",
            Method::DifferentialEvolution => "differential_evolution",
            Method::GpSurrogate => "gp_surrogate",
        }
    }
}

fn d_factor() -> usize {
    15
}
fn d_f() -> f64 {
    0.8
}
fn d_cr() -> f64 {
    0.9
}
fn d_step() -> f64 {
    0.1
}
fn d_local() -> usize {
    80
}
fn d_cands() -> usize {
    2000
}
fn d_refit() -> usize {
    10
}

/// Tunables of the three optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    /// DE population = factor x dimension.
    #[serde(default = "d_factor")]
    pub de_population_factor: usize,
    #[serde(default = "d_f")]
    pub de_mutation: f64,
    #[serde(default = "d_cr")]
    pub de_crossover: f64,
    /// Offset of the initial simplex vertices.
    #[serde(default = "d_step")]
    pub nm_initial_step: f64,
    /// Points nearest the incumbent used to fit the surrogate.
    #[serde(default = "d_local")]
    pub gp_local_points: usize,
    #[serde(default = "d_cands")]
    pub gp_candidates: usize,
    /// Hyperparameters are refit every this many evaluations.
    #[serde(default = "d_refit")]
    pub gp_refit_every: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            de_population_factor: d_factor(),
            de_mutation: d_f(),
            de_crossover: d_cr(),
            nm_initial_step: d_step(),
            gp_local_points: d_local(),
            gp_candidates: d_cands(),
            gp_refit_every: d_refit(),
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.de_population_factor == 0 {
            return Err(Error::config("de_population_factor must be >= 1"));
        }
        if !(self.de_mutation > 0.0 && self.de_mutation <= 2.0) {
            return Err(Error::config("de_mutation must lie in (0, 2]"));
        }
        if !(0.0..=1.0).contains(&self.de_crossover) {
            return Err(Error::config("de_crossover must lie in [0, 1]"));
        }
        if !(self.nm_initial_step > 0.0 && self.nm_initial_step < UPPER - LOWER) {
            return Err(Error::config("nm_initial_step must lie in (0, 2)"));
        }
        if self.gp_local_points < 2 || self.gp_candidates == 0 || self.gp_refit_every == 0 {
            return Err(Error::config("gp settings must be positive (local points >= 2)"));
        }
        Ok(())
    }
}

/// Box-constrained minimization budget shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_evaluations: usize,
    pub target: f64,
}

/// Outcome of a raw minimization. `trace[k]` is the best value after `k+1`
/// evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub restarts: usize,
    pub trace: Vec<f64>,
}

pub type Objective<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Counts evaluations and keeps the incumbent.
pub(crate) struct Tracker<'a> {
    f: &'a Objective<'a>,
    budget: Budget,
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub trace: Vec<f64>,
}

impl<'a> Tracker<'a> {
    fn new(f: &'a Objective<'a>, dim: usize, budget: Budget) -> Self {
        Tracker {
            f,
            budget,
            best_x: vec![0.0; dim],
            best_f: f64::INFINITY,
            trace: Vec::with_capacity(budget.max_evaluations),
        }
    }

    pub fn evals(&self) -> usize {
        self.trace.len()
    }

    pub fn remaining(&self) -> usize {
        self.budget.max_evaluations - self.evals()
    }

    pub fn done(&self) -> bool {
        self.remaining() == 0 || self.best_f <= self.budget.target
    }

    /// Raw objective value without bookkeeping; non-finite maps to +inf.
    pub fn value(&self, x: &[f64]) -> f64 {
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    pub fn record(&mut self, x: &[f64], v: f64) {
        debug_assert!(!self.done());
        if v < self.best_f {
            self.best_f = v;
            self.best_x.copy_from_slice(x);
        }
        self.trace.push(self.best_f);
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        let v = self.value(x);
        self.record(x, v);
        v
    }

    fn finish(self, restarts: usize) -> Minimum {
        Minimum {
            converged: self.best_f <= self.budget.target,
            x: self.best_x,
            value: self.best_f,
            evaluations: self.trace.len(),
            restarts,
            trace: self.trace,
        }
    }
}

pub(crate) fn clip(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(LOWER, UPPER);
    }
}

/// Minimizes `f` over `[-1, 1]^dim`, stopping once `budget.target` is reached
/// or the evaluation budget is spent. Deterministic per seed.
pub fn minimize_fn(
    f: &Objective<'_>,
    dim: usize,
    method: Method,
    budget: Budget,
    settings: &OptimizerSettings,
    seed: u64,
) -> Result<Minimum> {
    settings.validate()?;
    if dim == 0 {
        return Err(Error::input("dimension must be >= 1"));
    }
    if budget.max_evaluations == 0 {
        return Err(Error::config("max_iterations must be >= 1"));
    }
    let mut t = Tracker::new(f, dim, budget);
    let restarts = match method {
        Method::NelderMead => nelder_mead::run(&mut t, dim, settings, seed),
        Method::DifferentialEvolution => de::run(&mut t, dim, settings, seed),
        Method::GpSurrogate => gp::run(&mut t, dim, settings, seed),
    };
    Ok(t.finish(restarts))
}

fn d_max_iter() -> usize {
    1000
}
fn d_target() -> f64 {
    1e-10
}

/// Spectrum-matching problem for one target spectrum.
#[derive(Debug, Clone)]
pub struct BaselineProblem {
    pub target: Vec<f64>,
    pub projection: ProjectionMatrix,
    pub max_iterations: usize,
    pub target_cost: f64,
    /// Known coefficients, used only for reporting.
    pub truth: Option<Vec<f64>>,
}

impl BaselineProblem {
    pub fn new(geometry: &AggregateGeometry, scan: &TipScan, target: Vec<f64>) -> Result<Self> {
        let projection = ProjectionMatrix::new(geometry, scan)?;
        if target.len() != projection.n_tip {
            return Err(Error::input(format!(
                "target spectrum has {} values, scan has {} positions",
                target.len(),
                projection.n_tip
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("target spectrum contains non-finite values"));
        }
        Ok(BaselineProblem {
            target,
            projection,
            max_iterations: d_max_iter(),
            target_cost: d_target(),
            truth: None,
        })
    }

    /// Problem whose target is the clean spectrum of `coefficients`.
    pub fn from_state(geometry: &AggregateGeometry, scan: &TipScan, coefficients: &[f64]) -> Result<Self> {
        let c = normalize_output(coefficients)?;
        let projection = ProjectionMatrix::new(geometry, scan)?;
        let target = projection.spectrum(&c)?;
        let mut p = BaselineProblem::new(geometry, scan, target)?;
        p.truth = Some(c);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.projection.n_sites
    }

    /// Mean squared difference between the spectrum of the normalized
    /// candidate and the target.
    pub fn cost(&self, candidate: &[f64]) -> Result<f64> {
        if candidate.len() != self.dim() {
            return Err(Error::input(format!(
                "candidate has {} coefficients, expected {}",
                candidate.len(),
                self.dim()
            )));
        }
        if candidate.iter().any(|v| !(LOWER..=UPPER).contains(v)) {
            return Err(Error::Domain("candidate outside [-1, 1] bounds".into()));
        }
        let norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateCandidate(format!("norm {norm:.3e}")));
        }
        let mut s = 0.0;
        for (i, t) in self.target.iter().enumerate() {
            let a: f64 = self.projection.row(i).iter().zip(candidate).map(|(f, c)| f * c).sum::<f64>() / norm;
            let d = a * a - t;
            s += d * d;
        }
        Ok(s / self.target.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    pub best_cost: f64,
    pub converged: bool,
    pub restarts: usize,
    /// Unit-norm, sign-canonical best candidate.
    pub candidate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    pub trace: Vec<f64>,
}

pub fn minimize(problem: &BaselineProblem, method: Method, seed: u64, settings: &OptimizerSettings) -> Result<BaselineResult> {
    if problem.max_iterations == 0 {
        return Err(Error::config("max_iterations must be >= 1"));
    }
    if !(problem.target_cost >= 0.0) {
        return Err(Error::config("target_cost must be >= 0"));
    }
    let f = |x: &[f64]| problem.cost(x).unwrap_or(f64::INFINITY);
    let budget = Budget {
        max_evaluations: problem.max_iterations,
        target: problem.target_cost,
    };
    let m = minimize_fn(&f, problem.dim(), method, budget, settings, seed)?;
    if !m.value.is_finite() {
        return Err(Error::Numerical {
            message: "no finite cost was found".into(),
            iterations: m.evaluations,
        });
    }
    let candidate = canonicalize_sign(&normalize_output(&m.x)?)?;
    let loss = match &problem.truth {
        Some(t) => Some(loss(t, &candidate)?),
        None => None,
    };
    Ok(BaselineResult {
        method,
        seed,
        iterations: m.evaluations,
        best_cost: m.value,
        converged: m.converged,
        restarts: m.restarts,
        candidate,
        loss,
        trace: m.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::diagonalize;
    use crate::geometry::{build_geometry, GeometryConfig};
    use crate::hamiltonian::clean_hamiltonian;
    use crate::nearfield::ScanConfig;
    use proptest::prelude::*;

    fn chain_problem(n: usize, state: usize) -> BaselineProblem {
        let g = build_geometry(&GeometryConfig::chain(n)).unwrap();
        let scan = TipScan::build(&ScanConfig::line(400, 40.0, 2.0), &g).unwrap();
        let es = diagonalize(&clean_hamiltonian(&g)).unwrap();
        BaselineProblem::from_state(&g, &scan, &es.coefficients[state]).unwrap()
    }

    fn quadratic(x: &[f64]) -> f64 {
        const A: [f64; 4] = [0.3, -0.5, 0.1, 0.7];
        const W: [f64; 4] = [1.0, 3.0, 0.5, 2.0];
        x.iter().zip(A.iter().zip(W)).map(|(x, (a, w))| w * (x - a) * (x - a)).sum()
    }

    #[test]
    fn cost_vanishes_at_truth_and_its_negative() {
        let p = chain_problem(5, 2);
        let c = p.truth.clone().unwrap();
        let scale = p.target.iter().map(|t| t * t).sum::<f64>() / p.target.len() as f64;
        assert!(p.cost(&c).unwrap() <= 1e-20 * scale);
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        assert!(p.cost(&neg).unwrap() <= 1e-20 * scale);
        let half: Vec<f64> = c.iter().map(|v| 0.5 * v).collect();
        assert!(p.cost(&half).unwrap() <= 1e-20 * scale);
        assert!(p.cost(&[0.3, 0.1, -0.2, 0.5, 0.4]).unwrap() > 1e-6);
    }

    #[test]
    fn cost_errors() {
        let p = chain_problem(5, 0);
        assert!(matches!(p.cost(&[0.0; 5]), Err(Error::DegenerateCandidate(_))));
        assert!(p.cost(&[0.0; 4]).is_err());
        assert!(p.cost(&[1.5, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(p.target.len(), 400);
    }

    #[test]
    fn nelder_mead_solves_quadratic() {
        let b = Budget {
            max_evaluations: 1000,
            target: 1e-12,
        };
        let m = minimize_fn(&quadratic, 4, Method::NelderMead, b, &OptimizerSettings::default(), 3).unwrap();
        assert!(m.value < 1e-8, "{}", m.value);
        assert!(m.converged);
        assert_eq!(m.trace.len(), m.evaluations);
    }

    fn small_pop() -> OptimizerSettings {
        OptimizerSettings {
            de_population_factor: 4,
            ..Default::default()
        }
    }

    #[test]
    fn every_method_makes_progress_on_quadratic() {
        let b = Budget {
            max_evaluations: 400,
            target: 0.0,
        };
        let start = quadratic(&[0.0; 4]);
        for method in Method::ALL {
            let m = minimize_fn(&quadratic, 4, method, b, &small_pop(), 1).unwrap();
            assert_eq!(m.evaluations, 400, "{method:?}");
            assert!(m.value < 1e-2 * start, "{method:?}: {}", m.value);
            assert!(m.x.iter().all(|v| (LOWER..=UPPER).contains(v)));
        }
    }

    #[test]
    fn traces_are_monotone_and_runs_deterministic() {
        let p = chain_problem(4, 1);
        for method in Method::ALL {
            let mut p = p.clone();
            p.max_iterations = 150;
            let a = minimize(&p, method, 9, &OptimizerSettings::default()).unwrap();
            let b = minimize(&p, method, 9, &OptimizerSettings::default()).unwrap();
            assert_eq!(a, b, "{method:?}");
            assert!(a.trace.windows(2).all(|w| w[1] <= w[0]), "{method:?}");
            assert_eq!(*a.trace.last().unwrap(), a.best_cost);
            let norm: f64 = a.candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(a.candidate.iter().all(|v| (LOWER..=UPPER).contains(v)));
            assert!(a.iterations <= 150);
        }
    }

    #[test]
    fn stops_at_target() {
        let b = Budget {
            max_evaluations: 1000,
            target: 1e-3,
        };
        for method in Method::ALL {
            let m = minimize_fn(&quadratic, 4, method, b, &small_pop(), 2).unwrap();
            assert!(m.converged, "{method:?}");
            assert!(m.value <= 1e-3);
            let first = m.trace.iter().position(|v| *v <= 1e-3).unwrap();
            assert_eq!(first + 1, m.evaluations, "{method:?}");
        }
    }

    #[test]
    fn result_serializes() {
        let mut p = chain_problem(3, 0);
        p.max_iterations = 20;
        let r = minimize(&p, Method::NelderMead, 0, &OptimizerSettings::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["method"], "nelder_mead");
        assert!(v["loss"].is_number());
        let back: BaselineResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cost_is_nonnegative_and_scale_invariant(
            x in proptest::collection::vec(-1.0f64..1.0, 5),
            s in 0.1f64..1.0,
        ) {
            let p = chain_problem(5, 3);
            prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let c = p.cost(&x).unwrap();
            prop_assert!(c >= 0.0);
            let y: Vec<f64> = x.iter().map(|v| -s * v).collect();
            let c2 = p.cost(&y).unwrap();
            prop_assert!((c - c2).abs() <= 1e-12 * (c + 1e-300));
        }
    }
}
