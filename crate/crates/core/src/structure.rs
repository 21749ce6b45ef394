//! Identifiability (rank of the stacked matrix) and pairwise redundant-arm
//! elimination.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SampleGenerationMatrix;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Numerical rank over the reals.
pub fn rank_of(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let largest = sv.max();
    if largest <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count()
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    b.rows_mut(0, top.nrows()).copy_from(top);
    b.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    b
}

/// True iff the row space of `a_r` is a strict subset of that of `a_s`.
pub fn is_row_space_strict_subset(a_r: &DMatrix<f64>, a_s: &DMatrix<f64>) -> Result<bool> {
    if a_r.ncols() != a_s.ncols() {
        return Err(Error::DimensionMismatch {
            what: "column count",
            expected: a_s.ncols(),
            actual: a_r.ncols(),
        });
    }
    let rank_s = rank_of(a_s);
    Ok(rank_of(&vstack(a_r, a_s)) == rank_s && rank_of(a_r) < rank_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RedundantArm {
    /// Original index of the removed arm.
    pub removed: usize,
    /// Original index of the arm whose row space contains it.
    pub witness: usize,
}

#[derive(Debug, Clone)]
pub struct StructureReport {
    pub rank: usize,
    pub alphabet_size: usize,
    pub identifiable: bool,
    pub redundant_arms: Vec<RedundantArm>,
    pub reduced: SampleGenerationMatrix,
    /// Original index of a surviving arm that distinguishes every symbol.
    pub invertible_arm: Option<usize>,
}

impl StructureReport {
    pub fn surviving_arms(&self) -> Vec<usize> {
        self.reduced.arm_ids()
    }
}

/// Removes redundant arms pair by pair.
///
/// Pairs are scanned in ascending order and the scan restarts after every
/// removal. When two arms span the same row space one of them is dropped
/// uniformly at random using `rng`.
pub fn eliminate_redundant<R: Rng + ?Sized>(a: &SampleGenerationMatrix, rng: &mut R) -> StructureReport {
    let rank = rank_of(a.stacked());
    let arm_ranks: Vec<usize> = a.per_arm().iter().map(rank_of).collect();
    let mut alive: Vec<usize> = (0..a.arm_count()).collect();
    let mut redundant_arms = Vec::new();

    'scan: loop {
        for x in 0..alive.len() {
            for y in x + 1..alive.len() {
                let (r, s) = (alive[x], alive[y]);
                let (rank_r, rank_s) = (arm_ranks[r], arm_ranks[s]);
                let rank_b = rank_of(&vstack(a.arm_matrix(r), a.arm_matrix(s)));
                let (removed, witness) = if rank_b == rank_r && rank_r > rank_s {
                    (s, r)
                } else if rank_b == rank_s && rank_s > rank_r {
                    (r, s)
                } else if rank_b == rank_r && rank_r == rank_s {
                    if rng.random_bool(0.5) {
                        (r, s)
                    } else {
                        (s, r)
                    }
                } else {
                    continue;
                };
                alive.retain(|&k| k != removed);
                redundant_arms.push(RedundantArm {
                    removed: a.arm(removed).arm_index,
                    witness: a.arm(witness).arm_index,
                });
                continue 'scan;
            }
        }
        break;
    }

    let reduced = a.select_arms(&alive);
    let invertible_arm = (0..reduced.arm_count())
        .find(|&k| reduced.is_invertible_arm(k))
        .map(|k| reduced.arm(k).arm_index);
    StructureReport {
        rank,
        alphabet_size: a.alphabet_size(),
        identifiable: rank == a.alphabet_size(),
        redundant_arms,
        reduced,
        invertible_arm,
    }
}
