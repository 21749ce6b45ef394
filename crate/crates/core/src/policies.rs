//! Arm-selection policies: round-robin, UBpull, LBpull and the static
//! fixed-fraction baseline.
//!
//! Arm indices here are local to the (reduced) matrix the policy runs on and
//! are zero-based.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{arm_variance_scores, bound_from_matrix, combine_fisher, unit_fisher_matrices};
use crate::error::{Error, Result};
use crate::estimators::{DistributionEstimate, EstimatorKind, ObservationCounts, PseudoInverse};
use crate::model::{output_probabilities, SampleGenerationMatrix};

/// Scores within this relative distance of the best are tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    RoundRobin,
    UbPull,
    LbPull,
    /// Static baseline drawing arm `k` with probability `alpha[k]` every step.
    FixedFraction(Vec<f64>),
}

impl PolicyKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            PolicyKind::RoundRobin => "RRpull",
            PolicyKind::UbPull => "UBpull",
            PolicyKind::LbPull => "LBpull",
            PolicyKind::FixedFraction(_) => "Baseline",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::RoundRobin => f.write_str("rr"),
            PolicyKind::UbPull => f.write_str("ub"),
            PolicyKind::LbPull => f.write_str("lb"),
            PolicyKind::FixedFraction(alpha) => {
                let parts: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
                write!(f, "fixed:{}", parts.join("/"))
            }
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    /// Accepts `rr`, `ub`, `lb` and `fixed:a1/a2/...` (plus long aliases).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("fixed:") {
            let alpha = rest
                .split('/')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad fraction `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(PolicyKind::FixedFraction(alpha));
        }
        match lower.as_str() {
            "rr" | "rrpull" | "round-robin" => Ok(PolicyKind::RoundRobin),
            "ub" | "ubpull" | "ub-pull" => Ok(PolicyKind::UbPull),
            "lb" | "lbpull" | "lb-pull" => Ok(PolicyKind::LbPull),
            other => Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// `c_t = (t mod K) + 1`, returned zero-based.
pub fn next_arm_round_robin(t: u64, arm_count: usize) -> usize {
    (t % arm_count as u64) as usize
}

/// Mutable state of one policy over one simulated run.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub kind: PolicyKind,
    pub counts: ObservationCounts,
    pub current_estimate: DistributionEstimate,
    rng: ChaCha8Rng,
    weights: Option<WeightedIndex<f64>>,
    /// Steps at which LBpull fell back to round-robin.
    pub fallback_steps: Vec<u64>,
}

impl PolicyState {
    /// Fresh state with zero counts and the uniform initial estimate.
    pub fn new(kind: PolicyKind, a: &SampleGenerationMatrix, estimator: EstimatorKind, seed: u64) -> Result<Self> {
        let weights = match &kind {
            PolicyKind::FixedFraction(alpha) => {
                if alpha.len() != a.arm_count() {
                    return Err(Error::DimensionMismatch {
                        what: "fixed-fraction weights",
                        expected: a.arm_count(),
                        actual: alpha.len(),
                    });
                }
                Some(WeightedIndex::new(alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
            _ => None,
        };
        let n = a.alphabet_size();
        Ok(PolicyState {
            kind,
            counts: ObservationCounts::new(a),
            current_estimate: DistributionEstimate {
                p: vec![1.0 / n as f64; n],
                kind: estimator,
                step: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights,
            fallback_steps: Vec::new(),
        })
    }

    fn first_unpulled(&self) -> Option<usize> {
        self.counts.per_arm_pulls().iter().position(|&t| t == 0)
    }

    /// Chooses the arm for step `t` (one-based).
    pub fn choose(&mut self, t: u64, a: &SampleGenerationMatrix, pinv: Option<&PseudoInverse>) -> Result<usize> {
        match self.kind {
            PolicyKind::RoundRobin => Ok(next_arm_round_robin(t, a.arm_count())),
            PolicyKind::UbPull => {
                let pinv = pinv.ok_or(Error::NotIdentifiable {
                    rank: crate::structure::rank_of(a.stacked()),
                    n: a.alphabet_size(),
                })?;
                next_arm_ubpull(self, a, pinv)
            }
            PolicyKind::LbPull => Ok(next_arm_lbpull(self, a, t)),
            PolicyKind::FixedFraction(_) => next_arm_fixed_fraction(self),
        }
    }
}

/// Picks uniformly among the entries within [`TIE_TOLERANCE`] of the maximum.
pub fn argmax_with_ties<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - TIE_TOLERANCE * best.abs();
    let ties: Vec<usize> = (0..values.len()).filter(|&k| values[k] >= threshold).collect();
    match ties.len() {
        0 => 0,
        1 => ties[0],
        len => ties[rng.random_range(0..len)],
    }
}

/// Decrease of `U` from one extra pull of each arm: `ζ_k (1/t_k − 1/(t_k+1))`.
pub fn ubpull_gains(pinv: &PseudoInverse, a: &SampleGenerationMatrix, p_tilde: &[f64], pulls: &[u64]) -> Result<Vec<f64>> {
    let q = output_probabilities(a, p_tilde)?;
    Ok(arm_variance_scores(pinv, a, q.as_slice())
        .iter()
        .zip(pulls)
        .map(|(z, &t)| {
            let t = t as f64;
            z * (1.0 / t - 1.0 / (t + 1.0))
        })
        .collect())
}

pub fn next_arm_ubpull(state: &mut PolicyState, a: &SampleGenerationMatrix, pinv: &PseudoInverse) -> Result<usize> {
    if let Some(k) = state.first_unpulled() {
        return Ok(k);
    }
    let gains = ubpull_gains(pinv, a, &state.current_estimate.p, state.counts.per_arm_pulls())?;
    Ok(argmax_with_ties(&gains, &mut state.rng))
}

/// Decrease of the estimated bound `B` from one extra pull of each arm, or
/// an error if the pseudo-Fisher matrix at the current counts is singular.
pub fn lbpull_gains(a: &SampleGenerationMatrix, p_tilde: &[f64], pulls: &[u64]) -> Result<Vec<f64>> {
    let units = unit_fisher_matrices(a, p_tilde)?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pulls: Vec<f64> = pulls.iter().map(|&t| t as f64).collect();
    let base = combine_fisher(&units, &pulls);
    let current = bound_from_matrix(&base)?;
    units
        .iter()
        .map(|u| Ok(current - bound_from_matrix(&(&base + u))?))
        .collect()
}

/// LBpull choice for step `t`. Falls back to round-robin (and records the
/// step) when the pseudo-Fisher matrix cannot be inverted.
pub fn next_arm_lbpull(state: &mut PolicyState, a: &SampleGenerationMatrix, t: u64) -> usize {
    if let Some(k) = state.first_unpulled() {
        return k;
    }
    match lbpull_gains(a, &state.current_estimate.p, state.counts.per_arm_pulls()) {
        Ok(gains) => argmax_with_ties(&gains, &mut state.rng),
        Err(_) => {
            state.fallback_steps.push(t);
            next_arm_round_robin(t, a.arm_count())
        }
    }
}

pub fn next_arm_fixed_fraction(state: &mut PolicyState) -> Result<usize> {
    let weights = state
        .weights
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("fixed-fraction policy requires allocation weights".into()))?;
    Ok(weights.sample(&mut state.rng))
}
