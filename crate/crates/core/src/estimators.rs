//! Pseudoinverse and smoothed maximum-likelihood estimators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{accumulate_output_probabilities, OutputProbabilities, SampleGenerationMatrix};
use crate::structure::{rank_of, RANK_TOLERANCE};

/// Pull totals `t_k` and per-output counts `t_{k,i}` (stacked like `A`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationCounts {
    per_arm_pulls: Vec<u64>,
    per_output_counts: Vec<u64>,
    offsets: Vec<usize>,
}

impl ObservationCounts {
    pub fn new(a: &SampleGenerationMatrix) -> Self {
        ObservationCounts {
            per_arm_pulls: vec![0; a.arm_count()],
            per_output_counts: vec![0; a.row_count()],
            offsets: a.offsets().to_vec(),
        }
    }

    /// Builds counts from stacked per-output counts.
    pub fn from_output_counts(a: &SampleGenerationMatrix, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != a.row_count() {
            return Err(Error::DimensionMismatch {
                what: "per-output counts",
                expected: a.row_count(),
                actual: counts.len(),
            });
        }
        let offsets = a.offsets().to_vec();
        let per_arm_pulls = offsets
            .windows(2)
            .map(|w| counts[w[0]..w[1]].iter().sum())
            .collect();
        Ok(ObservationCounts {
            per_arm_pulls,
            per_output_counts: counts,
            offsets,
        })
    }

    /// Records one observation of output row `output` of arm `arm`.
    pub fn record(&mut self, arm: usize, output: usize) {
        self.per_arm_pulls[arm] += 1;
        self.per_output_counts[self.offsets[arm] + output] += 1;
    }

    pub fn per_arm_pulls(&self) -> &[u64] {
        &self.per_arm_pulls
    }

    pub fn per_output_counts(&self) -> &[u64] {
        &self.per_output_counts
    }

    pub fn arm_counts(&self, k: usize) -> &[u64] {
        &self.per_output_counts[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn total_pulls(&self) -> u64 {
        self.per_arm_pulls.iter().sum()
    }

    pub fn arm_count(&self) -> usize {
        self.per_arm_pulls.len()
    }

    pub fn all_arms_pulled(&self) -> bool {
        self.per_arm_pulls.iter().all(|&t| t > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Pseudoinverse,
    MaxLikelihood,
}

impl EstimatorKind {
    pub fn short_name(self) -> &'static str {
        match self {
            EstimatorKind::Pseudoinverse => "PIest",
            EstimatorKind::MaxLikelihood => "MLest",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Pseudoinverse => "pi",
            EstimatorKind::MaxLikelihood => "ml",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pi" | "piest" | "pseudoinverse" => Ok(EstimatorKind::Pseudoinverse),
            "ml" | "mlest" | "mle" | "max-likelihood" => Ok(EstimatorKind::MaxLikelihood),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionEstimate {
    pub p: Vec<f64>,
    pub kind: EstimatorKind,
    pub step: u64,
}

/// `q̂_{k,i} = t_{k,i} / t_k`.
pub fn empirical_output_frequencies(counts: &ObservationCounts) -> Result<OutputProbabilities> {
    let mut q = Vec::with_capacity(counts.per_output_counts.len());
    for (k, &pulls) in counts.per_arm_pulls.iter().enumerate() {
        if pulls == 0 {
            return Err(Error::UnpulledArm { arm: k });
        }
        q.extend(counts.arm_counts(k).iter().map(|&c| c as f64 / pulls as f64));
    }
    OutputProbabilities::new(q, counts.offsets.clone())
}

/// Moore-Penrose inverse of a full-column-rank stacked matrix.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    matrix: DMatrix<f64>,
    column_sq_norms: Vec<f64>,
}

impl PseudoInverse {
    pub fn new(a: &SampleGenerationMatrix) -> Result<Self> {
        let stacked = a.stacked();
        let rank = rank_of(stacked);
        if rank < a.alphabet_size() {
            return Err(Error::NotIdentifiable {
                rank,
                n: a.alphabet_size(),
            });
        }
        let svd = stacked.clone().svd(true, true);
        let eps = RANK_TOLERANCE * svd.singular_values.max();
        let matrix = svd
            .pseudo_inverse(eps)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let column_sq_norms = matrix.column_iter().map(|c| c.norm_squared()).collect();
        Ok(PseudoInverse {
            matrix,
            column_sq_norms,
        })
    }

    /// The `n × m` matrix `A⁺`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Σ_j A⁺(j, h)²` for every stacked row `h`.
    pub fn column_sq_norms(&self) -> &[f64] {
        &self.column_sq_norms
    }

    pub fn apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                what: "output probability vector",
                expected: self.matrix.ncols(),
                actual: q.len(),
            });
        }
        Ok((&self.matrix * DVector::from_column_slice(q)).as_slice().to_vec())
    }
}

/// `p̃ = A⁺ q̂`. Entries are returned raw and may leave `[0, 1]`.
pub fn pseudoinverse_estimate(
    a: &SampleGenerationMatrix,
    q_hat: &OutputProbabilities,
) -> Result<DistributionEstimate> {
    let pinv = PseudoInverse::new(a)?;
    Ok(DistributionEstimate {
        p: pinv.apply(q_hat.as_slice())?,
        kind: EstimatorKind::Pseudoinverse,
        step: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleSettings {
    fn default() -> Self {
        MleSettings {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome {
    pub estimate: DistributionEstimate,
    pub iterations: usize,
    pub converged: bool,
}

/// Entries of the iterate are floored here before renormalization.
const MLE_FLOOR: f64 = 1e-15;

/// Smoothed log-likelihood `Σ_k Σ_i (t_{k,i} + 1) log q̃_{k,i}`.
pub fn smoothed_log_likelihood(
    a: &SampleGenerationMatrix,
    counts: &ObservationCounts,
    p: &[f64],
) -> Result<f64> {
    check_counts(a, counts)?;
    let q = crate::model::output_probabilities(a, p)?;
    Ok(log_likelihood_of(counts.per_output_counts(), q.as_slice()))
}

fn log_likelihood_of(counts: &[u64], q: &[f64]) -> f64 {
    counts
        .iter()
        .zip(q)
        .map(|(&c, &qv)| (c as f64 + 1.0) * qv.ln())
        .sum()
}

fn check_counts(a: &SampleGenerationMatrix, counts: &ObservationCounts) -> Result<()> {
    if counts.per_output_counts.len() != a.row_count() || counts.offsets != a.offsets() {
        return Err(Error::DimensionMismatch {
            what: "observation counts",
            expected: a.row_count(),
            actual: counts.per_output_counts.len(),
        });
    }
    Ok(())
}

/// Maximizes the smoothed log-likelihood over the simplex by multiplicative
/// fixed-point iteration, renormalizing after every update.
///
/// Stops once the largest coordinate change drops below `settings.tol`. If
/// `max_iter` is exhausted the last iterate is returned with
/// `converged == false`.
pub fn mle_estimate(
    a: &SampleGenerationMatrix,
    counts: &ObservationCounts,
    init: &[f64],
    settings: MleSettings,
) -> Result<MleOutcome> {
    check_counts(a, counts)?;
    let n = a.alphabet_size();
    if init.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial estimate",
            expected: n,
            actual: init.len(),
        });
    }
    if init.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "MLE initial point must lie strictly inside the simplex".into(),
        ));
    }

    let weights: Vec<f64> = counts
        .per_output_counts
        .iter()
        .map(|&c| c as f64 + 1.0)
        .collect();
    let total_weight: f64 = weights.iter().sum();
    let init_sum: f64 = init.iter().sum();
    let mut p: Vec<f64> = init.iter().map(|v| v / init_sum).collect();
    let mut next = vec![0.0; n];
    let mut q = vec![0.0; a.row_count()];
    let mut ratio = vec![0.0; a.row_count()];
    let mut previous_ll = f64::NEG_INFINITY;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        accumulate_output_probabilities(a, &p, &mut q);
        if cfg!(debug_assertions) {
            let ll = log_likelihood_of(&counts.per_output_counts, &q);
            debug_assert!(
                ll >= previous_ll - 1e-9 * ll.abs().max(1.0),
                "log-likelihood decreased from {previous_ll} to {ll}"
            );
            previous_ll = ll;
        }
        for ((r, w), qv) in ratio.iter_mut().zip(&weights).zip(&q) {
            *r = w / qv;
        }
        let mut sum = 0.0;
        for (j, (nj, pj)) in next.iter_mut().zip(&p).enumerate() {
            let score: f64 = (0..a.arm_count()).map(|k| ratio[a.row_of(k, j)]).sum();
            *nj = (pj * score / total_weight).max(MLE_FLOOR);
            sum += *nj;
        }
        let mut delta: f64 = 0.0;
        for (nj, pj) in next.iter_mut().zip(p.iter_mut()) {
            *nj /= sum;
            delta = delta.max((*nj - *pj).abs());
            *pj = *nj;
        }
        if delta < settings.tol {
            converged = true;
            break;
        }
    }

    Ok(MleOutcome {
        estimate: DistributionEstimate {
            p,
            kind: EstimatorKind::MaxLikelihood,
            step: counts.total_pulls(),
        },
        iterations,
        converged,
    })
}
