//! Python bindings for `distlearn`.
//!
//! Library errors surface as `ValueError`. Long simulations release the
//! interpreter lock.

use distlearn::bounds::{self, FisherInformation};
use distlearn::cli::analyze_spec;
use distlearn::estimators::{self, MleSettings, ObservationCounts};
use distlearn::model::{self, ProblemSpec, SampleGenerationMatrix};
use distlearn::sim::{self, Configuration, StepGrid, TrialSettings};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: distlearn::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// An arm-sampling problem: alphabet size, arm functions and, optionally,
/// the hidden distribution used for simulation.
#[pyclass(name = "Problem", module = "distlearn_py")]
struct PyProblem {
    spec: ProblemSpec,
    matrix: SampleGenerationMatrix,
}

impl PyProblem {
    fn wrap(spec: ProblemSpec) -> Self {
        let matrix = model::build_matrices(&spec);
        PyProblem { spec, matrix }
    }

    fn distribution(&self, p: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        p.or_else(|| self.spec.true_distribution.clone())
            .ok_or_else(|| PyValueError::new_err("no distribution given and the problem has none"))
    }

    fn counts(&self, counts: Vec<Vec<u64>>) -> PyResult<ObservationCounts> {
        ObservationCounts::from_output_counts(&self.matrix, counts.concat()).map_err(py_err)
    }
}

#[pymethods]
impl PyProblem {
    /// `arms[k][j]` is the integer output label of arm `k` on symbol `j`.
    #[new]
    #[pyo3(signature = (alphabet_size, arms, distribution=None, horizon=None, trials=None, seed=None))]
    fn new(
        alphabet_size: usize,
        arms: Vec<Vec<usize>>,
        distribution: Option<Vec<f64>>,
        horizon: Option<u64>,
        trials: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut spec = ProblemSpec::from_arm_maps(alphabet_size, &arms, distribution).map_err(py_err)?;
        if let Some(h) = horizon {
            spec.horizon = h;
        }
        if let Some(t) = trials {
            spec.trials = t;
        }
        if let Some(s) = seed {
            spec.master_seed = s;
        }
        Ok(PyProblem::wrap(spec.validated().map_err(py_err)?))
    }

    /// Parses a TOML problem spec.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyProblem::wrap(model::parse_problem_spec(text).map_err(py_err)?))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.spec.to_toml_string().map_err(py_err)
    }

    #[getter]
    fn alphabet_size(&self) -> usize {
        self.spec.alphabet_size
    }

    #[getter]
    fn arm_count(&self) -> usize {
        self.matrix.arm_count()
    }

    #[getter]
    fn true_distribution(&self) -> Option<Vec<f64>> {
        self.spec.true_distribution.clone()
    }

    #[getter]
    fn horizon(&self) -> u64 {
        self.spec.horizon
    }

    #[getter]
    fn trials(&self) -> usize {
        self.spec.trials
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.spec.master_seed
    }

    /// Per-arm binary matrices as nested lists.
    fn arm_matrices(&self) -> Vec<Vec<Vec<f64>>> {
        self.matrix
            .per_arm()
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect()
    }

    /// Output probabilities per arm under `p`.
    #[pyo3(signature = (p=None))]
    fn output_probabilities(&self, p: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let p = self.distribution(p)?;
        let q = model::output_probabilities(&self.matrix, &p).map_err(py_err)?;
        Ok((0..q.arm_count()).map(|k| q.block(k).to_vec()).collect())
    }

    /// Rank, identifiability and redundant arms. Arm numbers are one-based,
    /// as in the `analyze` command's report.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = analyze_spec(&self.spec);
        let d = PyDict::new(py);
        d.set_item("rank", report.rank)?;
        d.set_item("identifiable", report.identifiable)?;
        let removed: Vec<(usize, usize)> = report.redundant_arms.iter().map(|r| (r.removed, r.witness)).collect();
        d.set_item("redundant_arms", removed)?;
        d.set_item("surviving_arms", report.surviving_arms)?;
        d.set_item("invertible_arm", report.invertible_arm)?;
        Ok(d)
    }

    /// Pseudoinverse estimate from per-arm output counts.
    fn pseudoinverse_estimate(&self, counts: Vec<Vec<u64>>) -> PyResult<Vec<f64>> {
        let counts = self.counts(counts)?;
        let q = estimators::empirical_output_frequencies(&counts).map_err(py_err)?;
        Ok(estimators::pseudoinverse_estimate(&self.matrix, &q).map_err(py_err)?.p)
    }

    /// Smoothed maximum-likelihood estimate from per-arm output counts.
    #[pyo3(signature = (counts, init=None, tol=1e-10, max_iter=10_000))]
    fn mle_estimate(&self, counts: Vec<Vec<u64>>, init: Option<Vec<f64>>, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, usize, bool)> {
        let counts = self.counts(counts)?;
        let n = self.spec.alphabet_size;
        let init = init.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let out = estimators::mle_estimate(&self.matrix, &counts, &init, MleSettings { tol, max_iter }).map_err(py_err)?;
        Ok((out.estimate.p, out.iterations, out.converged))
    }

    /// Fisher information matrix for the given per-arm pull counts.
    #[pyo3(signature = (pulls, p=None))]
    fn fisher_information(&self, pulls: Vec<f64>, p: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let info = self.fisher(pulls, p)?;
        Ok(info.matrix.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    #[pyo3(signature = (pulls, p=None))]
    fn crlb_error_bound(&self, pulls: Vec<f64>, p: Option<Vec<f64>>) -> PyResult<f64> {
        bounds::crlb_error_bound(&self.fisher(pulls, p)?).map_err(py_err)
    }

    #[pyo3(signature = (pulls, p=None))]
    fn pi_variance_upper_bound(&self, pulls: Vec<f64>, p: Option<Vec<f64>>) -> PyResult<f64> {
        let p = self.distribution(p)?;
        bounds::pi_variance_upper_bound(&self.matrix, &p, &pulls).map_err(py_err)
    }

    /// Optimal allocation fractions and the bound they attain at `t` pulls.
    #[pyo3(signature = (t, grid_step=0.01, p=None))]
    fn crlb_allocation_search(&self, t: f64, grid_step: f64, p: Option<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
        let p = self.distribution(p)?;
        let (alpha, bound) = bounds::crlb_allocation_search(&self.matrix, &p, t, grid_step).map_err(py_err)?;
        Ok((alpha.alpha, bound))
    }

    fn __repr__(&self) -> String {
        format!("Problem(alphabet_size={}, arms={})", self.spec.alphabet_size, self.matrix.arm_count())
    }
}

impl PyProblem {
    fn fisher(&self, pulls: Vec<f64>, p: Option<Vec<f64>>) -> PyResult<FisherInformation> {
        let p = self.distribution(p)?;
        bounds::fisher_information(&self.matrix, &p, &pulls).map_err(py_err)
    }
}

/// `Σ p_j (1 − p_j) / t`.
#[pyfunction]
fn crude_lower_bound(p: Vec<f64>, t: u64) -> f64 {
    bounds::crude_lower_bound(&p, t)
}

/// Runs a Monte Carlo experiment. `configs` are strings such as `"lb+ml"`,
/// `"rr+pi"` or `"fixed:0.2/0.3/0.5+ml"`.
#[pyfunction]
#[pyo3(signature = (problem, configs, trials=None, horizon=None, log_points=30, target_error=1e-3))]
fn run_experiment<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    configs: Vec<String>,
    trials: Option<usize>,
    horizon: Option<u64>,
    log_points: usize,
    target_error: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let configs: Vec<Configuration> = configs
        .iter()
        .map(|c| c.parse())
        .collect::<Result<_, _>>()
        .map_err(py_err)?;
    let mut spec = problem.spec.clone();
    if let Some(h) = horizon {
        spec.horizon = h;
    }
    let trials = trials.unwrap_or(spec.trials);
    let mut settings = TrialSettings::new(StepGrid::geometric(spec.horizon, log_points));
    settings.target_error = target_error;
    let report = py
        .detach(|| sim::run_experiment(&spec, &configs, trials, &settings))
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("steps", report.steps.clone())?;
    out.set_item("crude_bound", report.crude_bound.clone())?;
    out.set_item("crlb_bound", report.crlb_bound.clone())?;
    out.set_item("crlb_alpha", report.crlb_alpha.clone())?;
    let results = PyDict::new(py);
    for r in &report.results {
        let d = PyDict::new(py);
        d.set_item("mean_error", r.mean_error.clone())?;
        d.set_item("stderr_error", r.stderr_error.clone())?;
        d.set_item("arm_pulls_mean", r.arm_pulls_mean.clone())?;
        d.set_item("arm_pulls_var", r.arm_pulls_var.clone())?;
        d.set_item("pulls_to_target_mean", r.pulls_to_target.mean)?;
        d.set_item("pulls_to_target_stderr", r.pulls_to_target.stderr)?;
        d.set_item("censored_trials", r.pulls_to_target.censored)?;
        d.set_item("averaged_curve_pulls", r.pulls_to_target.averaged_curve)?;
        d.set_item("final_estimate_mean", r.final_estimate_mean.clone())?;
        d.set_item("min_q_tilde", r.min_q_tilde)?;
        results.set_item(&r.name, d)?;
    }
    out.set_item("results", results)?;
    Ok(out)
}

#[pymodule]
fn distlearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(crude_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
