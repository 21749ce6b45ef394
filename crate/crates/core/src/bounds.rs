//! Error bounds: the crude bound, Fisher information and Cramér-Rao bound,
//! the pseudoinverse-variance upper bound and the allocation grid search.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::PseudoInverse;
use crate::model::{output_probabilities, SampleGenerationMatrix};

/// Fisher matrices whose condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest arm count accepted by [`crlb_allocation_search`].
pub const MAX_SEARCH_ARMS: usize = 6;

/// Relative gap below which two lattice points count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// `Σ_j p_j (1 − p_j) / t`.
pub fn crude_lower_bound(p: &[f64], t: u64) -> f64 {
    p.iter().map(|&pj| pj * (1.0 - pj)).sum::<f64>() / t as f64
}

/// Fisher information in `θ = (p_1, …, p_{n−1})` for a pull allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInformation {
    pub matrix: DMatrix<f64>,
    pub pulls: Vec<f64>,
}

/// Contribution of a single pull of each arm to the Fisher matrix.
///
/// Entry `(i, j)` of arm `k`'s matrix is
/// `Σ_ℓ (A_k(ℓ,i) − A_k(ℓ,n)) (A_k(ℓ,j) − A_k(ℓ,n)) / q_{k,ℓ}`.
/// An `Err` entry marks an arm with a zero-probability output.
pub fn unit_fisher_matrices(a: &SampleGenerationMatrix, p: &[f64]) -> Result<Vec<Result<DMatrix<f64>>>> {
    let q = output_probabilities(a, p)?;
    let n = a.alphabet_size();
    let d = n - 1;
    Ok((0..a.arm_count())
        .map(|k| {
            let ak = a.arm_matrix(k);
            let mut m = DMatrix::zeros(d, d);
            let mut diff = vec![0.0; d];
            for (l, &qv) in q.block(k).iter().enumerate() {
                if !(qv > 0.0) {
                    return Err(Error::SingularModel {
                        arm: a.arm(k).arm_index,
                        output: l,
                    });
                }
                let last = ak[(l, n - 1)];
                for (i, di) in diff.iter_mut().enumerate() {
                    *di = ak[(l, i)] - last;
                }
                for i in 0..d {
                    if diff[i] == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        m[(i, j)] += diff[i] * diff[j] / qv;
                    }
                }
            }
            Ok(m)
        })
        .collect())
}

fn check_pulls(a: &SampleGenerationMatrix, pulls: &[f64]) -> Result<()> {
    if pulls.len() != a.arm_count() {
        return Err(Error::DimensionMismatch {
            what: "pull allocation",
            expected: a.arm_count(),
            actual: pulls.len(),
        });
    }
    if pulls.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(
            "pull counts must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Combines per-arm unit matrices with pull weights.
pub(crate) fn combine_fisher(units: &[DMatrix<f64>], pulls: &[f64]) -> DMatrix<f64> {
    let d = units.first().map_or(0, |m| m.nrows());
    let mut m = DMatrix::zeros(d, d);
    for (u, &t) in units.iter().zip(pulls) {
        if t != 0.0 {
            m += u * t;
        }
    }
    m
}

pub fn fisher_information(
    a: &SampleGenerationMatrix,
    p: &[f64],
    pulls: &[f64],
) -> Result<FisherInformation> {
    check_pulls(a, pulls)?;
    let d = a.alphabet_size() - 1;
    let mut matrix = DMatrix::zeros(d, d);
    for (unit, &t) in unit_fisher_matrices(a, p)?.into_iter().zip(pulls) {
        if t > 0.0 {
            matrix += unit? * t;
        }
    }
    Ok(FisherInformation {
        matrix,
        pulls: pulls.to_vec(),
    })
}

/// Inverse of a symmetric positive definite matrix, rejecting
/// ill-conditioned input.
pub fn checked_spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !(max / min <= MAX_CONDITION) {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::SingularFisher { condition });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// `tr(I⁻¹) + Σ_{i,j} I⁻¹(i,j)`: the Cramér-Rao bound on the total variance.
pub fn crlb_error_bound(info: &FisherInformation) -> Result<f64> {
    bound_from_matrix(&info.matrix)
}

pub(crate) fn bound_from_matrix(m: &DMatrix<f64>) -> Result<f64> {
    let inv = checked_spd_inverse(m)?;
    Ok(inv.trace() + inv.sum())
}

/// `ζ_k = Σ_i (Σ_j A⁺(j, s+i)²) q̃_{k,i} (1 − q̃_{k,i})` for every arm.
pub fn arm_variance_scores(pinv: &PseudoInverse, a: &SampleGenerationMatrix, q_tilde: &[f64]) -> Vec<f64> {
    let norms = pinv.column_sq_norms();
    (0..a.arm_count())
        .map(|k| {
            let off = a.offset(k);
            (off..off + a.output_count(k))
                .map(|h| norms[h] * q_tilde[h] * (1.0 - q_tilde[h]))
                .sum()
        })
        .collect()
}

/// Estimated pseudoinverse variance bound `U(p̃, t)` using a precomputed `A⁺`.
pub fn variance_upper_bound_with(
    pinv: &PseudoInverse,
    a: &SampleGenerationMatrix,
    p_tilde: &[f64],
    pulls: &[f64],
) -> Result<f64> {
    check_pulls(a, pulls)?;
    if let Some(k) = pulls.iter().position(|&t| t <= 0.0) {
        return Err(Error::UnpulledArm { arm: k });
    }
    let q = output_probabilities(a, p_tilde)?;
    Ok(arm_variance_scores(pinv, a, q.as_slice())
        .iter()
        .zip(pulls)
        .map(|(z, t)| z / t)
        .sum())
}

/// `U(p̃, t)` for the (already reduced) matrix `a`.
pub fn pi_variance_upper_bound(a: &SampleGenerationMatrix, p_tilde: &[f64], pulls: &[f64]) -> Result<f64> {
    let pinv = PseudoInverse::new(a)?;
    variance_upper_bound_with(&pinv, a, p_tilde, pulls)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationFraction {
    pub alpha: Vec<f64>,
    pub grid_step: f64,
}

impl AllocationFraction {
    pub fn new(alpha: Vec<f64>, grid_step: f64) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "allocation fractions must be non-negative".into(),
            ));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > grid_step.max(1e-12) {
            return Err(Error::InvalidArgument(format!(
                "allocation fractions sum to {sum}, not 1"
            )));
        }
        Ok(AllocationFraction { alpha, grid_step })
    }
}

fn lattice_divisions(grid_step: f64) -> Result<u32> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 0.5], got {grid_step}"
        )));
    }
    let divisions = (1.0 / grid_step).round();
    if ((1.0 / grid_step) - divisions).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "grid step {grid_step} does not divide 1"
        )));
    }
    Ok(divisions as u32)
}

/// All compositions of `total` into `parts` non-negative parts, in
/// lexicographic order, flattened.
fn compositions(total: u32, parts: usize) -> Vec<u32> {
    fn fill(remaining: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<u32>) {
        if parts == 1 {
            out.extend_from_slice(prefix);
            out.push(remaining);
            return;
        }
        for c in 0..=remaining {
            prefix.push(c);
            fill(remaining - c, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Minimizes the Cramér-Rao bound at `t` total pulls over the lattice of
/// allocation fractions with spacing `grid_step`.
///
/// Singular allocations are skipped. Ties go to the lexicographically
/// smallest fraction vector.
pub fn crlb_allocation_search(
    a: &SampleGenerationMatrix,
    p: &[f64],
    t: f64,
    grid_step: f64,
) -> Result<(AllocationFraction, f64)> {
    let divisions = lattice_divisions(grid_step)?;
    let k = a.arm_count();
    if k > MAX_SEARCH_ARMS {
        return Err(Error::InvalidArgument(format!(
            "allocation search supports at most {MAX_SEARCH_ARMS} arms, got {k}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("total pulls must be positive".into()));
    }
    let units = unit_fisher_matrices(a, p)?;
    let lattice = compositions(divisions, k);
    let values: Vec<Option<f64>> = lattice
        .par_chunks(k)
        .map(|point| {
            let mut m = DMatrix::zeros(a.alphabet_size() - 1, a.alphabet_size() - 1);
            for (unit, &c) in units.iter().zip(point) {
                if c == 0 {
                    continue;
                }
                match unit {
                    Ok(u) => m += u * (c as f64 / divisions as f64 * t),
                    Err(_) => return None,
                }
            }
            bound_from_matrix(&m).ok()
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (idx, value) in values.iter().enumerate() {
        if let Some(v) = *value {
            match best {
                Some((_, b)) if v >= b - TIE_TOLERANCE * b.abs() => {}
                _ => best = Some((idx, v)),
            }
        }
    }
    let (idx, value) = best.ok_or(Error::NoValidAllocation)?;
    let alpha = lattice[idx * k..(idx + 1) * k]
        .iter()
        .map(|&c| c as f64 / divisions as f64)
        .collect();
    Ok((AllocationFraction { alpha, grid_step }, value))
}

/// Bound along one coordinate: `α_arm` sweeps the lattice while the other
/// arms keep their relative proportions from `alpha` (uniform if they are
/// all zero). Singular points carry `None`.
pub fn allocation_slice(
    a: &SampleGenerationMatrix,
    p: &[f64],
    t: f64,
    alpha: &[f64],
    arm: usize,
    grid_step: f64,
) -> Result<Vec<(f64, Option<f64>)>> {
    let divisions = lattice_divisions(grid_step)?;
    let k = a.arm_count();
    if alpha.len() != k || arm >= k {
        return Err(Error::DimensionMismatch {
            what: "allocation fractions",
            expected: k,
            actual: alpha.len(),
        });
    }
    let units: Vec<Option<DMatrix<f64>>> = unit_fisher_matrices(a, p)?
        .into_iter()
        .map(|u| u.ok())
        .collect();
    let rest: f64 = alpha.iter().enumerate().filter(|&(i, _)| i != arm).map(|(_, v)| v).sum();
    let shares: Vec<f64> = (0..k)
        .map(|i| {
            if i == arm {
                0.0
            } else if rest > 0.0 {
                alpha[i] / rest
            } else if k > 1 {
                1.0 / (k - 1) as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok((0..=divisions)
        .map(|c| {
            let x = c as f64 / divisions as f64;
            let pulls: Vec<f64> = (0..k)
                .map(|i| if i == arm { x * t } else { (1.0 - x) * shares[i] * t })
                .collect();
            let mut m = DMatrix::zeros(a.alphabet_size() - 1, a.alphabet_size() - 1);
            for (u, &w) in units.iter().zip(&pulls) {
                if w > 0.0 {
                    match u {
                        Some(u) => m += u * w,
                        None => return (x, None),
                    }
                }
            }
            (x, bound_from_matrix(&m).ok())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1() -> SampleGenerationMatrix {
        SampleGenerationMatrix::from_arm_maps(3, &[vec![0, 1, 1], vec![0, 1, 0], vec![0, 0, 1]]).unwrap()
    }

    fn identity(n: usize) -> SampleGenerationMatrix {
        SampleGenerationMatrix::from_arm_maps(n, &[(0..n).collect()]).unwrap()
    }

    /// Two arms mirrored by the symbol swap (1 3)(2 4).
    fn mirrored_pair() -> SampleGenerationMatrix {
        SampleGenerationMatrix::from_arm_maps(4, &[vec![0, 1, 2, 2], vec![2, 2, 0, 1]]).unwrap()
    }

    #[test]
    fn crude_bound_examples() {
        assert!((crude_lower_bound(&[0.5, 0.5], 100) - 0.005).abs() < 1e-15);
        assert!((crude_lower_bound(&[0.2, 0.3, 0.5], 1000) - 6.2e-4).abs() < 1e-15);
        let eps = 1e-12;
        assert!(crude_lower_bound(&[1.0 - eps, eps], 1) < 1e-11);
    }

    #[test]
    fn binomial_fisher_information() {
        let (p1, p2, t) = (0.3, 0.7, 50.0);
        let info = fisher_information(&identity(2), &[p1, p2], &[t]).unwrap();
        assert!((info.matrix[(0, 0)] - t * (1.0 / p1 + 1.0 / p2)).abs() < 1e-9);
        let bound = crlb_error_bound(&info).unwrap();
        assert!((bound - 2.0 * p1 * p2 / t).abs() < 1e-12);
    }

    #[test]
    fn zero_pulls_give_zero_matrix() {
        let info = fisher_information(&example1(), &[0.2, 0.3, 0.5], &[0.0; 3]).unwrap();
        assert!(info.matrix.iter().all(|&v| v == 0.0));
        assert!(matches!(crlb_error_bound(&info), Err(Error::SingularFisher { .. })));
    }

    #[test]
    fn invertible_arm_matches_crude_bound() {
        let p = [0.2, 0.3, 0.5];
        let info = fisher_information(&identity(3), &p, &[1000.0]).unwrap();
        let bound = crlb_error_bound(&info).unwrap();
        assert!((bound - 6.2e-4).abs() < 1e-12, "{bound}");
    }

    #[test]
    fn example2_is_singular() {
        let a = SampleGenerationMatrix::from_arm_maps(4, &[vec![0, 1, 1, 2], vec![0, 0, 0, 1]]).unwrap();
        let info = fisher_information(&a, &[0.1, 0.2, 0.3, 0.4], &[100.0, 100.0]).unwrap();
        assert!(matches!(crlb_error_bound(&info), Err(Error::SingularFisher { .. })));
    }

    #[test]
    fn zero_probability_output_is_singular_model() {
        let err = fisher_information(&identity(2), &[1.0, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularModel { arm: 0, output: 1 }));
    }

    #[test]
    fn upper_bound_identity_and_homogeneity() {
        let u = pi_variance_upper_bound(&identity(2), &[0.5, 0.5], &[40.0]).unwrap();
        assert!((u - 0.5 / 40.0).abs() < 1e-15);
        let a = example1();
        let p = [0.2, 0.3, 0.5];
        let u1 = pi_variance_upper_bound(&a, &p, &[3.0, 7.0, 11.0]).unwrap();
        let u2 = pi_variance_upper_bound(&a, &p, &[6.0, 14.0, 22.0]).unwrap();
        assert!((u1 - 2.0 * u2).abs() < 1e-14);
        assert!(matches!(
            pi_variance_upper_bound(&a, &p, &[1.0, 0.0, 1.0]),
            Err(Error::UnpulledArm { arm: 1 })
        ));
    }

    #[test]
    fn lattice_enumeration() {
        let c = compositions(2, 3);
        assert_eq!(c, vec![0, 0, 2, 0, 1, 1, 0, 2, 0, 1, 0, 1, 1, 1, 0, 2, 0, 0]);
        assert_eq!(compositions(100, 3).len() / 3, 5151);
    }

    #[test]
    fn search_single_arm() {
        let (alpha, _) = crlb_allocation_search(&identity(3), &[0.2, 0.3, 0.5], 1000.0, 0.01).unwrap();
        assert_eq!(alpha.alpha, vec![1.0]);
    }

    #[test]
    fn search_symmetric_pair_splits_evenly() {
        let (alpha, _) =
            crlb_allocation_search(&mirrored_pair(), &[0.1, 0.4, 0.1, 0.4], 1000.0, 0.01).unwrap();
        assert_eq!(alpha.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn search_rejects_bad_step() {
        let a = example1();
        assert!(crlb_allocation_search(&a, &[0.2, 0.3, 0.5], 1.0, 0.0).is_err());
        assert!(crlb_allocation_search(&a, &[0.2, 0.3, 0.5], 1.0, 0.7).is_err());
        assert!(crlb_allocation_search(&a, &[0.2, 0.3, 0.5], 1.0, 0.3).is_err());
    }

    #[test]
    fn search_fails_when_every_point_is_singular() {
        let a = SampleGenerationMatrix::from_arm_maps(4, &[vec![0, 1, 1, 2], vec![0, 0, 0, 1]]).unwrap();
        assert!(matches!(
            crlb_allocation_search(&a, &[0.1, 0.2, 0.3, 0.4], 100.0, 0.1),
            Err(Error::NoValidAllocation)
        ));
    }

    #[test]
    fn slice_passes_through_optimum() {
        let a = example1();
        let p = [0.2, 0.3, 0.5];
        let (alpha, best) = crlb_allocation_search(&a, &p, 1000.0, 0.01).unwrap();
        let slice = allocation_slice(&a, &p, 1000.0, &alpha.alpha, 0, 0.01).unwrap();
        assert_eq!(slice.len(), 101);
        let at_opt = slice
            .iter()
            .find(|(x, _)| (x - alpha.alpha[0]).abs() < 1e-9)
            .and_then(|(_, v)| *v)
            .unwrap();
        assert!((at_opt - best).abs() < 1e-9 * best);
        // alpha_0 = 1 leaves arms 2 and 3 unpulled.
        assert!(slice.last().unwrap().1.is_none());
    }
}
