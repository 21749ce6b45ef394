//! Independent reference computations shared by the integration tests.
//! Only the library's matrix construction is used here, never its
//! estimators, bounds or policies.
#![allow(dead_code)]

use distlearn::model::SampleGenerationMatrix;
use nalgebra::DMatrix;
use rand::Rng;

pub const EXAMPLE1_P: [f64; 3] = [0.2, 0.3, 0.5];

pub fn example1_maps() -> Vec<Vec<usize>> {
    vec![vec![0, 1, 1], vec![0, 1, 0], vec![0, 0, 1]]
}

pub fn example1() -> SampleGenerationMatrix {
    SampleGenerationMatrix::from_arm_maps(3, &example1_maps()).unwrap()
}

/// Uniform draw from the open simplex via normalized exponentials.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-9).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Simplex point with every entry at least `floor`.
pub fn random_interior<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw = random_simplex(rng, n);
    let scale = 1.0 - floor * n as f64;
    raw.into_iter().map(|v| floor + scale * v).collect()
}

pub fn random_arm_maps<R: Rng>(rng: &mut R, n: usize, arms: usize, max_outputs: usize) -> Vec<Vec<usize>> {
    (0..arms)
        .map(|_| {
            let m = rng.random_range(1..=max_outputs);
            (0..n).map(|_| rng.random_range(0..m)).collect()
        })
        .collect()
}

/// Draws arm maps until the stacked matrix has full column rank.
pub fn random_identifiable<R: Rng>(rng: &mut R, n: usize, arms: usize, max_outputs: usize) -> SampleGenerationMatrix {
    loop {
        let maps = random_arm_maps(rng, n, arms, max_outputs);
        let a = SampleGenerationMatrix::from_arm_maps(n, &maps).unwrap();
        if gaussian_rank(a.stacked()) == n {
            return a;
        }
    }
}

/// Rank by Gaussian elimination with partial pivoting. Exact for the small
/// 0/1 matrices used here.
pub fn gaussian_rank(m: &DMatrix<f64>) -> usize {
    let mut m = m.clone();
    let (rows, cols) = m.shape();
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        if m[(pivot, c)].abs() < 1e-9 {
            continue;
        }
        m.swap_rows(pivot, rank);
        for r in 0..rows {
            if r != rank {
                let f = m[(r, c)] / m[(rank, c)];
                for cc in 0..cols {
                    m[(r, cc)] -= f * m[(rank, cc)];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// `q[k][l]` for each arm, summed symbol by symbol from the maps.
pub fn output_probs_from_maps(maps: &[Vec<usize>], p: &[f64]) -> Vec<Vec<f64>> {
    maps.iter()
        .map(|map| {
            let m = map.iter().max().map_or(0, |v| v + 1);
            let mut q = vec![0.0; m];
            for (j, &o) in map.iter().enumerate() {
                q[o] += p[j];
            }
            q
        })
        .collect()
}

/// The closed form written as two products per output row,
/// `A(l,i) A(l,j) (1 − A(l,n)) + (1 − A(l,i)) (1 − A(l,j)) A(l,n)`, over `q`.
pub fn literal_fisher_unit(a_k: &DMatrix<f64>, q_k: &[f64]) -> DMatrix<f64> {
    let n = a_k.ncols();
    let mut m = DMatrix::zeros(n - 1, n - 1);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let mut s = 0.0;
            for l in 0..a_k.nrows() {
                let (ai, aj, an) = (a_k[(l, i)], a_k[(l, j)], a_k[(l, n - 1)]);
                s += (ai * aj * (1.0 - an) + (1.0 - ai) * (1.0 - aj) * an) / q_k[l];
            }
            m[(i, j)] = s;
        }
    }
    m
}

/// Expected log-likelihood `Σ_k t_k Σ_l q_true(l) log q_θ(l)` with
/// `θ = p[..n-1]` and `p_n = 1 − Σθ`.
pub fn expected_log_likelihood(maps: &[Vec<usize>], pulls: &[f64], p_true: &[f64], theta: &[f64]) -> f64 {
    let mut p = theta.to_vec();
    p.push(1.0 - theta.iter().sum::<f64>());
    let q_true = output_probs_from_maps(maps, p_true);
    let q = output_probs_from_maps(maps, &p);
    let mut total = 0.0;
    for k in 0..maps.len() {
        for (qt, qv) in q_true[k].iter().zip(&q[k]) {
            total += pulls[k] * qt * qv.ln();
        }
    }
    total
}

/// Negative Hessian of the expected log-likelihood by central second
/// differences.
pub fn finite_difference_fisher(maps: &[Vec<usize>], pulls: &[f64], p: &[f64], h: f64) -> DMatrix<f64> {
    let d = p.len() - 1;
    let theta = &p[..d];
    let f = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut th = theta.to_vec();
        th[di] += si * h;
        th[dj] += sj * h;
        expected_log_likelihood(maps, pulls, p, &th)
    };
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let v = f(i, 1.0, j, 1.0) - f(i, 1.0, j, -1.0) - f(i, -1.0, j, 1.0) + f(i, -1.0, j, -1.0);
            m[(i, j)] = -v / (4.0 * h * h);
        }
    }
    m
}

/// `tr(I⁻¹) + ΣI⁻¹` using a plain LU inverse.
pub fn bound_via_lu(info: &DMatrix<f64>) -> Option<f64> {
    let inv = info.clone().try_inverse()?;
    Some(inv.trace() + inv.sum())
}

/// `Σ_k t_k F_k` from the literal per-row expansion.
pub fn literal_fisher(a: &SampleGenerationMatrix, p: &[f64], pulls: &[f64]) -> DMatrix<f64> {
    let n = a.alphabet_size();
    let mut total = DMatrix::zeros(n - 1, n - 1);
    for (a_k, &t) in a.per_arm().iter().zip(pulls) {
        let q: Vec<f64> = (0..a_k.nrows()).map(|l| (0..n).map(|j| a_k[(l, j)] * p[j]).sum()).collect();
        total += literal_fisher_unit(a_k, &q) * t;
    }
    total
}

/// Smoothed log-likelihood written directly from the maps.
pub fn smoothed_ll_from_maps(maps: &[Vec<usize>], counts: &[Vec<u64>], p: &[f64]) -> f64 {
    let q = output_probs_from_maps(maps, p);
    let mut total = 0.0;
    for k in 0..maps.len() {
        for (c, qv) in counts[k].iter().zip(&q[k]) {
            total += (*c as f64 + 1.0) * qv.ln();
        }
    }
    total
}

/// Maximizer of the smoothed log-likelihood over the n = 3 lattice with
/// the given number of divisions, interior points only.
pub fn grid_mle_n3(maps: &[Vec<usize>], counts: &[Vec<u64>], divisions: usize) -> Vec<f64> {
    let step = 1.0 / divisions as f64;
    let mut best = (f64::NEG_INFINITY, vec![]);
    for i in 1..divisions {
        for j in 1..divisions - i {
            let p = [i as f64 * step, j as f64 * step, (divisions - i - j) as f64 * step];
            let ll = smoothed_ll_from_maps(maps, counts, &p);
            if ll > best.0 {
                best = (ll, p.to_vec());
            }
        }
    }
    best.1
}

/// The row space of a partition matrix is the set of vectors constant on
/// its blocks, so `row(r) ⊆ row(s)` exactly when the partition of `s`
/// refines that of `r`.
pub fn refines(fine: &[usize], coarse: &[usize]) -> bool {
    let n = fine.len();
    (0..n).all(|i| (0..n).all(|j| fine[i] != fine[j] || coarse[i] == coarse[j]))
}

/// Least-squares membership: every row of `r` has a zero residual when
/// regressed on the rows of `s`.
pub fn row_space_contained_lstsq(r: &DMatrix<f64>, s: &DMatrix<f64>) -> bool {
    let st = s.transpose();
    let svd = st.clone().svd(true, true);
    (0..r.nrows()).all(|i| {
        let target = r.row(i).transpose();
        let x = svd.solve(&target, 1e-10).unwrap();
        (&st * x - target).norm() < 1e-8
    })
}

/// `U(t) = Σ_k Σ_i colnorm²(A⁺)_{k,i} q_{k,i}(1 − q_{k,i}) / t_k`, computed
/// from a fresh pseudoinverse.
pub fn direct_u(a: &SampleGenerationMatrix, p: &[f64], pulls: &[f64]) -> f64 {
    let stacked = a.stacked();
    let pinv = stacked.clone().pseudo_inverse(1e-12).unwrap();
    let q = stacked * nalgebra::DVector::from_column_slice(p);
    let mut u = 0.0;
    for (k, &t) in pulls.iter().enumerate() {
        for row in a.offset(k)..a.offset(k + 1) {
            let col: f64 = pinv.column(row).norm_squared();
            u += col * q[row] * (1.0 - q[row]) / t;
        }
    }
    u
}

/// Indices within `rel` of the maximum.
pub fn argmax_set(values: &[f64], rel: f64) -> Vec<usize> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = rel * max.abs().max(f64::MIN_POSITIVE);
    (0..values.len()).filter(|&i| values[i] >= max - tol).collect()
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
