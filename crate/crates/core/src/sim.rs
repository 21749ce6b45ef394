//! Seeded environment, single-trial simulation loop and Monte Carlo
//! aggregation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{crlb_allocation_search, crude_lower_bound};
use crate::error::{Error, Result};
use crate::estimators::{
    empirical_output_frequencies, mle_estimate, EstimatorKind, MleSettings, PseudoInverse,
};
use crate::model::{build_matrices, output_probabilities, ProblemSpec, SampleGenerationMatrix};
use crate::policies::{PolicyKind, PolicyState};
use crate::structure::{eliminate_redundant, RedundantArm};

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;
const ELIMINATION_STREAM: u64 = 2;

/// Trials are simulated in parallel batches of this size and reduced in
/// trial order.
const TRIAL_BATCH: usize = 256;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `parent`; independent of scheduling.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(index ^ 0xD1B5_4A32_D192_ED03))
}

/// Draws the hidden symbol i.i.d. from `P_X` and reveals one arm's output.
#[derive(Debug, Clone)]
pub struct Environment {
    cdf: Vec<f64>,
    symbol_outputs: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(p: &[f64], a: &SampleGenerationMatrix, seed: u64) -> Result<Self> {
        if p.len() != a.alphabet_size() {
            return Err(Error::DimensionMismatch {
                what: "true distribution",
                expected: a.alphabet_size(),
                actual: p.len(),
            });
        }
        let mut acc = 0.0;
        let cdf = p
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        Ok(Environment {
            cdf,
            symbol_outputs: a.arms().iter().map(|arm| arm.output_index_of_symbol.clone()).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws `X_t`. Consumes exactly one uniform variate.
    pub fn draw_symbol(&mut self) -> usize {
        let u: f64 = self.rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    /// Pulls `arm` and returns the index of the observed output `z_{arm,i}`.
    pub fn step(&mut self, arm: usize) -> usize {
        let x = self.draw_symbol();
        self.symbol_outputs[arm][x]
    }
}

/// `Σ_j (p̃_j − p_j)²`.
pub fn squared_error(p_tilde: &[f64], p: &[f64]) -> Result<f64> {
    if p_tilde.len() != p.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate",
            expected: p.len(),
            actual: p_tilde.len(),
        });
    }
    Ok(p_tilde.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// A policy paired with an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub policy: PolicyKind,
    pub estimator: EstimatorKind,
}

impl Configuration {
    pub fn new(policy: PolicyKind, estimator: EstimatorKind) -> Self {
        Configuration { policy, estimator }
    }

    /// Display name such as `LBpull+MLest`.
    pub fn name(&self) -> String {
        format!("{}+{}", self.policy.short_name(), self.estimator.short_name())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.policy, self.estimator)
    }
}

impl FromStr for Configuration {
    type Err = Error;

    /// `policy+estimator`, e.g. `lb+ml` or `fixed:0.2/0.8+ml`.
    fn from_str(s: &str) -> Result<Self> {
        let (policy, estimator) = s
            .rsplit_once('+')
            .ok_or_else(|| Error::InvalidArgument(format!("expected policy+estimator, got `{s}`")))?;
        Ok(Configuration::new(policy.parse()?, estimator.parse()?))
    }
}

/// Steps at which errors are logged, plus the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepGrid {
    pub horizon: u64,
    pub steps: Vec<u64>,
}

impl StepGrid {
    /// `points` log-spaced steps over `[1, horizon]`.
    pub fn geometric(horizon: u64, points: usize) -> Self {
        let mut steps = Vec::new();
        if horizon > 0 {
            let points = points.max(2);
            let top = (horizon as f64).ln();
            for i in 0..points {
                let t = (top * i as f64 / (points - 1) as f64).exp().round() as u64;
                steps.push(t.clamp(1, horizon));
            }
        }
        StepGrid::explicit(horizon, steps)
    }

    pub fn explicit(horizon: u64, steps: impl IntoIterator<Item = u64>) -> Self {
        let mut steps: Vec<u64> = steps.into_iter().filter(|&t| t >= 1 && t <= horizon).collect();
        steps.sort_unstable();
        steps.dedup();
        StepGrid { horizon, steps }
    }

    pub fn with_steps(mut self, extra: impl IntoIterator<Item = u64>) -> Self {
        self.steps.extend(extra);
        StepGrid::explicit(self.horizon, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    pub grid: StepGrid,
    pub target_error: f64,
    pub mle: MleSettings,
    pub grid_step: f64,
}

impl TrialSettings {
    pub fn new(grid: StepGrid) -> Self {
        TrialSettings {
            grid,
            target_error: 1e-3,
            mle: MleSettings::default(),
            grid_step: 0.01,
        }
    }
}

/// Everything recorded from one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    /// Squared error after every step `t = 1..=T`.
    pub errors: Vec<f64>,
    pub logged_errors: Vec<f64>,
    /// Smallest MLE-induced `q̃_{k,i}` at each logged step (empty for PI).
    pub logged_min_q: Vec<f64>,
    /// Final pull counts indexed by original arm.
    pub arm_pulls: Vec<u64>,
    /// Original index of the arm pulled at each step.
    pub choices: Vec<usize>,
    pub first_hit: Option<u64>,
    pub fallback_steps: Vec<u64>,
    pub mle_unconverged: u64,
    pub final_estimate: Vec<f64>,
    pub redundant_arms: Vec<RedundantArm>,
}

fn restrict_alpha(policy: &PolicyKind, ids: &[usize], full_arms: usize) -> Result<PolicyKind> {
    match policy {
        PolicyKind::FixedFraction(alpha) => {
            if alpha.len() != full_arms {
                return Err(Error::DimensionMismatch {
                    what: "fixed-fraction weights",
                    expected: full_arms,
                    actual: alpha.len(),
                });
            }
            Ok(PolicyKind::FixedFraction(ids.iter().map(|&k| alpha[k]).collect()))
        }
        other => Ok(other.clone()),
    }
}

/// Simulates one run: eliminates redundant arms, then pulls, observes and
/// re-estimates for `t = 1..=T`.
///
/// The pseudoinverse estimate stays at the uniform initial value until every
/// surviving arm has been pulled once. The MLE is warm-started from the
/// previous step's estimate.
pub fn run_trial(
    spec: &ProblemSpec,
    config: &Configuration,
    seed: u64,
    settings: &TrialSettings,
) -> Result<TrialTrace> {
    let p = spec
        .true_distribution
        .as_deref()
        .ok_or_else(|| Error::InvalidSpec("simulation requires a true distribution".into()))?;
    let full = build_matrices(spec);
    let mut elimination_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ELIMINATION_STREAM));
    let structure = eliminate_redundant(&full, &mut elimination_rng);
    let a = &structure.reduced;
    let ids = a.arm_ids();
    let pinv = match PseudoInverse::new(a) {
        Ok(pinv) => Some(pinv),
        Err(e) if config.estimator == EstimatorKind::Pseudoinverse => return Err(e),
        Err(_) => None,
    };

    let policy = restrict_alpha(&config.policy, &ids, full.arm_count())?;
    let mut state = PolicyState::new(policy, a, config.estimator, derive_seed(seed, POLICY_STREAM))?;
    let mut env = Environment::new(p, a, derive_seed(seed, ENV_STREAM))?;

    let horizon = settings.grid.horizon;
    let mut trace = TrialTrace {
        errors: Vec::with_capacity(horizon as usize),
        logged_errors: Vec::with_capacity(settings.grid.steps.len()),
        logged_min_q: Vec::new(),
        arm_pulls: vec![0; full.arm_count()],
        choices: Vec::with_capacity(horizon as usize),
        first_hit: None,
        fallback_steps: Vec::new(),
        mle_unconverged: 0,
        final_estimate: Vec::new(),
        redundant_arms: structure.redundant_arms.clone(),
    };
    let mut next_log = settings.grid.steps.iter().peekable();

    for t in 1..=horizon {
        let arm = state
            .choose(t, a, pinv.as_ref())
            .map_err(|e| e.at_step(t))?;
        let output = env.step(arm);
        state.counts.record(arm, output);
        trace.choices.push(ids[arm]);

        match config.estimator {
            EstimatorKind::Pseudoinverse => {
                if state.counts.all_arms_pulled() {
                    let q_hat = empirical_output_frequencies(&state.counts).map_err(|e| e.at_step(t))?;
                    let pinv = pinv.as_ref().expect("checked above");
                    state.current_estimate.p = pinv.apply(q_hat.as_slice()).map_err(|e| e.at_step(t))?;
                }
            }
            EstimatorKind::MaxLikelihood => {
                let outcome = mle_estimate(a, &state.counts, &state.current_estimate.p, settings.mle)
                    .map_err(|e| e.at_step(t))?;
                if !outcome.converged {
                    trace.mle_unconverged += 1;
                }
                state.current_estimate.p = outcome.estimate.p;
            }
        }
        state.current_estimate.step = t;

        let err = squared_error(&state.current_estimate.p, p)?;
        trace.errors.push(err);
        if trace.first_hit.is_none() && err <= settings.target_error {
            trace.first_hit = Some(t);
        }
        if next_log.peek() == Some(&&t) {
            next_log.next();
            trace.logged_errors.push(err);
            if config.estimator == EstimatorKind::MaxLikelihood {
                let q = output_probabilities(a, &state.current_estimate.p)?;
                trace
                    .logged_min_q
                    .push(q.as_slice().iter().copied().fold(f64::INFINITY, f64::min));
            }
        }
    }

    for (k, &pulls) in state.counts.per_arm_pulls().iter().enumerate() {
        trace.arm_pulls[ids[k]] = pulls;
    }
    trace.fallback_steps = std::mem::take(&mut state.fallback_steps);
    trace.final_estimate = state.current_estimate.p;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullsToTarget {
    /// Mean per-trial first-hitting step; trials that never hit count as the horizon.
    pub mean: f64,
    pub stderr: f64,
    pub censored: usize,
    /// First logged-or-not step at which the trial-averaged error curve
    /// reaches the target.
    pub averaged_curve: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigResult {
    pub name: String,
    pub mean_error: Vec<f64>,
    pub stderr_error: Vec<f64>,
    pub arm_pulls_mean: Vec<f64>,
    pub arm_pulls_var: Vec<f64>,
    pub pulls_to_target: PullsToTarget,
    pub final_estimate_mean: Vec<f64>,
    pub final_estimate_stderr: Vec<f64>,
    /// Smallest MLE-induced output probability over all logged steps.
    pub min_q_tilde: Option<f64>,
    pub q_tilde_violations: usize,
    pub fallback_steps: usize,
    pub mle_unconverged: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentEcho {
    pub alphabet_size: usize,
    pub arm_count: usize,
    pub distribution: Vec<f64>,
    pub horizon: u64,
    pub trials: usize,
    pub master_seed: u64,
    pub configurations: Vec<String>,
    pub target_error: f64,
    pub grid_step: f64,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    pub logged_steps: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub steps: Vec<u64>,
    pub results: Vec<ConfigResult>,
    pub crude_bound: Vec<f64>,
    /// Minimum Cramér-Rao bound over allocations; `None` if unavailable.
    pub crlb_bound: Option<Vec<f64>>,
    /// Minimizing allocation, indexed by original arm.
    pub crlb_alpha: Option<Vec<f64>>,
    pub config_echo: ExperimentEcho,
}

#[derive(Default)]
struct Accumulator {
    err_sum: Vec<f64>,
    err_sq_sum: Vec<f64>,
    curve_sum: Vec<f64>,
    pulls_sum: Vec<f64>,
    pulls_sq_sum: Vec<f64>,
    final_sum: Vec<f64>,
    final_sq_sum: Vec<f64>,
    hits: Vec<f64>,
    censored: usize,
    min_q: Option<f64>,
    violations: usize,
    fallbacks: usize,
    unconverged: u64,
}

impl Accumulator {
    fn new(logged: usize, horizon: u64, arms: usize, n: usize) -> Self {
        Accumulator {
            err_sum: vec![0.0; logged],
            err_sq_sum: vec![0.0; logged],
            curve_sum: vec![0.0; horizon as usize],
            pulls_sum: vec![0.0; arms],
            pulls_sq_sum: vec![0.0; arms],
            final_sum: vec![0.0; n],
            final_sq_sum: vec![0.0; n],
            ..Default::default()
        }
    }

    fn add(&mut self, trace: &TrialTrace, horizon: u64) {
        for (i, &e) in trace.logged_errors.iter().enumerate() {
            self.err_sum[i] += e;
            self.err_sq_sum[i] += e * e;
        }
        for (s, &e) in self.curve_sum.iter_mut().zip(&trace.errors) {
            *s += e;
        }
        for (k, &t) in trace.arm_pulls.iter().enumerate() {
            self.pulls_sum[k] += t as f64;
            self.pulls_sq_sum[k] += (t * t) as f64;
        }
        for (j, &v) in trace.final_estimate.iter().enumerate() {
            self.final_sum[j] += v;
            self.final_sq_sum[j] += v * v;
        }
        match trace.first_hit {
            Some(t) => self.hits.push(t as f64),
            None => {
                self.hits.push(horizon as f64);
                self.censored += 1;
            }
        }
        for &q in &trace.logged_min_q {
            self.min_q = Some(self.min_q.map_or(q, |m: f64| m.min(q)));
            if !(q > 0.0) {
                self.violations += 1;
            }
        }
        self.fallbacks += trace.fallback_steps.len();
        self.unconverged += trace.mle_unconverged;
    }

    fn finish(self, name: String, trials: usize, target: f64) -> ConfigResult {
        let nt = trials as f64;
        let mean_sd = |sum: &[f64], sq: &[f64]| -> (Vec<f64>, Vec<f64>) {
            sum.iter()
                .zip(sq)
                .map(|(&s, &q)| {
                    let mean = s / nt;
                    let var = if trials > 1 {
                        ((q - nt * mean * mean) / (nt - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    (mean, var)
                })
                .unzip()
        };
        let (mean_error, err_var) = mean_sd(&self.err_sum, &self.err_sq_sum);
        let (arm_pulls_mean, arm_pulls_var) = mean_sd(&self.pulls_sum, &self.pulls_sq_sum);
        let (final_estimate_mean, final_var) = mean_sd(&self.final_sum, &self.final_sq_sum);
        let stderr = |v: Vec<f64>| v.into_iter().map(|x| (x / nt).sqrt()).collect::<Vec<_>>();

        let hit_mean = self.hits.iter().sum::<f64>() / nt;
        let hit_var = if trials > 1 {
            self.hits.iter().map(|h| (h - hit_mean).powi(2)).sum::<f64>() / (nt - 1.0)
        } else {
            0.0
        };
        let averaged_curve = self
            .curve_sum
            .iter()
            .position(|&s| s / nt <= target)
            .map(|i| i as u64 + 1);

        ConfigResult {
            name,
            mean_error,
            stderr_error: stderr(err_var),
            arm_pulls_mean,
            arm_pulls_var,
            pulls_to_target: PullsToTarget {
                mean: hit_mean,
                stderr: (hit_var / nt).sqrt(),
                censored: self.censored,
                averaged_curve,
            },
            final_estimate_mean,
            final_estimate_stderr: stderr(final_var),
            min_q_tilde: self.min_q,
            q_tilde_violations: self.violations,
            fallback_steps: self.fallbacks,
            mle_unconverged: self.unconverged,
        }
    }
}

/// Runs `trials` independent trials of every configuration.
///
/// Trial `i` uses seed `derive_seed(master_seed, i)` for every configuration,
/// so configurations see the same hidden-symbol stream. Aggregation happens
/// in trial order, making the report independent of thread scheduling.
pub fn run_experiment(
    spec: &ProblemSpec,
    configs: &[Configuration],
    trials: usize,
    settings: &TrialSettings,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let p = spec
        .true_distribution
        .clone()
        .ok_or_else(|| Error::InvalidSpec("simulation requires a true distribution".into()))?;
    let horizon = settings.grid.horizon;
    let arms = spec.arm_count();

    let mut results = Vec::with_capacity(configs.len());
    for config in configs {
        let mut acc = Accumulator::new(settings.grid.steps.len(), horizon, arms, spec.alphabet_size);
        for start in (0..trials).step_by(TRIAL_BATCH) {
            let end = (start + TRIAL_BATCH).min(trials);
            let traces = (start..end)
                .into_par_iter()
                .map(|i| run_trial(spec, config, derive_seed(spec.master_seed, i as u64), settings))
                .collect::<Result<Vec<_>>>()?;
            for trace in &traces {
                acc.add(trace, horizon);
            }
        }
        results.push(acc.finish(config.name(), trials, settings.target_error));
    }

    let steps = settings.grid.steps.clone();
    let crude_bound = steps.iter().map(|&t| crude_lower_bound(&p, t)).collect();
    let (crlb_bound, crlb_alpha) = match crlb_curve(spec, &p, &steps, settings.grid_step) {
        Some((curve, alpha)) => (Some(curve), Some(alpha)),
        None => (None, None),
    };

    Ok(ExperimentReport {
        steps: steps.clone(),
        results,
        crude_bound,
        crlb_bound,
        crlb_alpha,
        config_echo: ExperimentEcho {
            alphabet_size: spec.alphabet_size,
            arm_count: arms,
            distribution: p,
            horizon,
            trials,
            master_seed: spec.master_seed,
            configurations: configs.iter().map(|c| c.name()).collect(),
            target_error: settings.target_error,
            grid_step: settings.grid_step,
            mle_tol: settings.mle.tol,
            mle_max_iter: settings.mle.max_iter,
            logged_steps: steps,
        },
    })
}

/// Minimum CRLB over allocations at each step. The optimum fraction does not
/// depend on `t` because the bound scales as `1/t`.
fn crlb_curve(spec: &ProblemSpec, p: &[f64], steps: &[u64], grid_step: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let full = build_matrices(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.master_seed, u64::MAX));
    let structure = eliminate_redundant(&full, &mut rng);
    let (alpha, unit_bound) = crlb_allocation_search(&structure.reduced, p, 1.0, grid_step).ok()?;
    let mut full_alpha = vec![0.0; full.arm_count()];
    for (k, id) in structure.reduced.arm_ids().into_iter().enumerate() {
        full_alpha[id] = alpha.alpha[k];
    }
    Some((steps.iter().map(|&t| unit_bound / t as f64).collect(), full_alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_spec() -> ProblemSpec {
        ProblemSpec::from_arm_maps(
            3,
            &[vec![0, 1, 1], vec![0, 1, 0], vec![0, 0, 1]],
            Some(vec![0.2, 0.3, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn squared_error_examples() {
        assert_eq!(squared_error(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(squared_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        let e = squared_error(&[0.25, 0.35, 0.40], &[0.2, 0.3, 0.5]).unwrap();
        assert!((e - 0.015).abs() < 1e-15);
        assert!(squared_error(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn near_degenerate_environment() {
        let a = SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 1]]).unwrap();
        let mut env = Environment::new(&[1.0 - 1e-9, 5e-10, 5e-10], &a, 5).unwrap();
        assert!((0..10_000).all(|_| env.step(0) == 0));
    }

    #[test]
    fn environment_frequencies_and_determinism() {
        let a = SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 2]]).unwrap();
        let p = [0.2, 0.3, 0.5];
        let mut env = Environment::new(&p, &a, 17).unwrap();
        let draws = 1_000_000;
        let mut hist = [0usize; 3];
        for _ in 0..draws {
            hist[env.step(0)] += 1;
        }
        for (h, pj) in hist.iter().zip(p) {
            assert!((*h as f64 / draws as f64 - pj).abs() < 0.002);
        }
        let seq = |seed| {
            let mut env = Environment::new(&p, &a, seed).unwrap();
            (0..100).map(|_| env.step(0)).collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
    }

    #[test]
    fn environment_consumes_one_draw_per_step() {
        let a = SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 1], vec![0, 1, 2]]).unwrap();
        let p = [0.2, 0.3, 0.5];
        let mut e1 = Environment::new(&p, &a, 8).unwrap();
        let mut e2 = Environment::new(&p, &a, 8).unwrap();
        for t in 0..50 {
            let _ = e1.step(t % 2);
            let _ = e2.step(1);
        }
        assert_eq!(e1.draw_symbol(), e2.draw_symbol());
    }

    #[test]
    fn round_robin_pi_follows_the_naive_algorithm() {
        let spec = example1_spec();
        let settings = TrialSettings::new(StepGrid::geometric(60, 10));
        let config = Configuration::new(PolicyKind::RoundRobin, EstimatorKind::Pseudoinverse);
        let trace = run_trial(&spec, &config, 42, &settings).unwrap();
        let expected: Vec<usize> = (1..=60u64).map(|t| (t % 3) as usize).collect();
        assert_eq!(trace.choices, expected);
        assert_eq!(trace.arm_pulls, vec![20, 20, 20]);
        // Before every arm is seen the estimate is still uniform.
        let uniform = squared_error(&[1.0 / 3.0; 3], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(trace.errors[0], uniform);
    }

    #[test]
    fn zero_horizon_keeps_uniform_estimate() {
        let settings = TrialSettings::new(StepGrid::geometric(0, 10));
        let config = Configuration::new(PolicyKind::UbPull, EstimatorKind::MaxLikelihood);
        let trace = run_trial(&example1_spec(), &config, 1, &settings).unwrap();
        assert!(trace.errors.is_empty() && trace.choices.is_empty());
        assert_eq!(trace.final_estimate, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn trial_is_deterministic() {
        let settings = TrialSettings::new(StepGrid::geometric(300, 12));
        for config in ["lb+ml", "ub+ml", "rr+pi", "fixed:0.2/0.3/0.5+ml"] {
            let config: Configuration = config.parse().unwrap();
            let a = run_trial(&example1_spec(), &config, 77, &settings).unwrap();
            let b = run_trial(&example1_spec(), &config, 77, &settings).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pi_on_unidentifiable_problem_errors() {
        let spec =
            ProblemSpec::from_arm_maps(4, &[vec![0, 1, 1, 2], vec![0, 0, 0, 1]], Some(vec![0.1, 0.2, 0.3, 0.4]))
                .unwrap();
        let settings = TrialSettings::new(StepGrid::geometric(10, 3));
        let config = Configuration::new(PolicyKind::RoundRobin, EstimatorKind::Pseudoinverse);
        assert!(matches!(
            run_trial(&spec, &config, 0, &settings),
            Err(Error::NotIdentifiable { .. })
        ));
    }

    #[test]
    fn eliminated_arms_are_never_pulled() {
        let spec = ProblemSpec::from_arm_maps(
            3,
            &[vec![0, 1, 1], vec![0, 1, 2], vec![0, 0, 1]],
            Some(vec![0.2, 0.3, 0.5]),
        )
        .unwrap();
        let settings = TrialSettings::new(StepGrid::geometric(200, 5));
        for config in ["rr+ml", "ub+ml", "lb+ml"] {
            let trace = run_trial(&spec, &config.parse().unwrap(), 3, &settings).unwrap();
            assert_eq!(trace.arm_pulls, vec![0, 200, 0]);
        }
    }

    #[test]
    fn single_trial_experiment_matches_trace() {
        let spec = example1_spec();
        let settings = TrialSettings::new(StepGrid::geometric(400, 8));
        let config: Configuration = "ub+ml".parse().unwrap();
        let report = run_experiment(&spec, std::slice::from_ref(&config), 1, &settings).unwrap();
        let trace = run_trial(&spec, &config, derive_seed(spec.master_seed, 0), &settings).unwrap();
        let res = &report.results[0];
        assert_eq!(res.mean_error, trace.logged_errors);
        let pulls: Vec<f64> = trace.arm_pulls.iter().map(|&t| t as f64).collect();
        assert_eq!(res.arm_pulls_mean, pulls);
        assert_eq!(
            res.pulls_to_target.mean,
            trace.first_hit.unwrap_or(settings.grid.horizon) as f64
        );
        assert_eq!(res.final_estimate_mean, trace.final_estimate);
    }

    #[test]
    fn grid_is_sorted_and_bounded() {
        let g = StepGrid::geometric(4000, 30).with_steps([1000, 5000]);
        assert_eq!(g.steps.first(), Some(&1));
        assert_eq!(g.steps.last(), Some(&4000));
        assert!(g.steps.windows(2).all(|w| w[0] < w[1]));
        assert!(g.steps.contains(&1000));
    }

    #[test]
    fn configuration_parsing() {
        let c: Configuration = "fixed:0.1/0.9+pi".parse().unwrap();
        assert_eq!(c.policy, PolicyKind::FixedFraction(vec![0.1, 0.9]));
        assert_eq!(c.estimator, EstimatorKind::Pseudoinverse);
        assert_eq!("lb+ml".parse::<Configuration>().unwrap().name(), "LBpull+MLest");
        assert!("lb".parse::<Configuration>().is_err());
    }
}
