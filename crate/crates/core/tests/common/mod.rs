#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screc::dense::Dense;
use screc::SparseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse matrix with integer ratings 1..=5 at the given density.
pub fn random_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> SparseMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if rng.random::<f64>() < density {
                triplets.push((i, j, rng.random_range(1..=5) as f64));
            }
        }
    }
    SparseMatrix::from_triplets(n, m, triplets).unwrap()
}

/// Same, with real-valued entries.
pub fn random_real_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> SparseMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if rng.random::<f64>() < density {
                triplets.push((i, j, rng.random_range(-2.0..2.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, m, triplets).unwrap()
}

pub fn to_na(m: &SparseMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.n_rows(), m.n_cols());
    for e in m.entries() {
        out[(e.row, e.col)] = e.value;
    }
    out
}

pub fn dense_to_na(d: &Dense<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.rows(), d.cols(), |i, j| d[(i, j)])
}

/// Singular values of a dense matrix, descending, from nalgebra.
pub fn oracle_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}
