//! Rank-k truncated SVD of a sparse matrix by randomized subspace
//! iteration, with a Rayleigh-Ritz step on every pass.
//!
//! Each pass costs two sparse-dense products and two thin QRs. The loop runs
//! at least `power_iterations` passes and then continues until every wanted
//! Ritz pair has residual `||A v - s u|| <= tolerance * s_max`, or until
//! `max_iterations`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dense::{jacobi_svd, thin_qr, Dense};
use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdQuality {
    pub oversampling: usize,
    /// Minimum number of subspace passes.
    pub power_iterations: usize,
    pub max_iterations: usize,
    /// Relative residual at which the iteration stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvdQuality {
    fn default() -> Self {
        Self { oversampling: 10, power_iterations: 4, max_iterations: 150, tolerance: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors<T> {
    /// n x k, orthonormal columns.
    pub u: Dense<T>,
    /// Non-increasing, non-negative.
    pub sigma: Vec<T>,
    /// m x k, orthonormal columns.
    pub v: Dense<T>,
    /// Subspace passes actually run.
    pub iterations: usize,
}

impl<T: Scalar> SvdFactors<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_rows(&self) -> usize {
        self.u.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.v.rows()
    }

    /// Dense `U diag(sigma) V^T`; for tests and small matrices only.
    pub fn reconstruct(&self) -> Dense<T> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, &s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }

    /// Binary cache, `SCF1`: magic, u32 version, u64 n, u64 m, u64 k,
    /// u64 iterations, then sigma (k x f64), u and v row-major as f64.
    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCF1", 1)?;
        for x in [self.n_rows(), self.n_cols(), self.rank(), self.iterations] {
            binio::write_u64(w, x as u64)?;
        }
        for &x in self.sigma.iter().chain(self.u.as_slice()).chain(self.v.as_slice()) {
            binio::write_f64(w, x.as_f64())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"SCF1", 1)?;
        let n = binio::read_usize(r)?;
        let m = binio::read_usize(r)?;
        let k = binio::read_usize(r)?;
        let iterations = binio::read_usize(r)?;
        let mut read_block = |len: usize| (0..len).map(|_| binio::read_f64(r).map(T::lit)).collect::<Result<Vec<T>>>();
        let sigma = read_block(k)?;
        let u = Dense::from_vec(n, k, read_block(n * k)?);
        let v = Dense::from_vec(m, k, read_block(m * k)?);
        Ok(Self { u, sigma, v, iterations })
    }
}

pub fn truncated_svd<T: Scalar>(matrix: &SparseMatrix<T>, k: usize, quality: &SvdQuality) -> Result<SvdFactors<T>> {
    let (n, m) = (matrix.n_rows(), matrix.n_cols());
    if k == 0 || k > n.min(m) {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={} for a {n}x{m} matrix", n.min(m))));
    }
    if let Some(p) = matrix.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("non-finite value at {:?}", matrix.cell(p))));
    }
    let width = (k + quality.oversampling).min(n.min(m));
    let tolerance = quality.tolerance.max(T::epsilon().as_f64() * 100.0);
    let max_iterations = quality.max_iterations.max(quality.power_iterations).max(1);

    let mut rng = seeded(quality.seed, stream::SVD);
    let omega = Dense::<T>::gaussian(m, width, &mut rng);
    let (mut q, _) = thin_qr(&matrix.mul_dense(&omega)?);

    let mut iterations = 0;
    loop {
        iterations += 1;
        // A^T Q = Z R, so A ~ Q R^T Z^T and with R = Ur S Vr^T the Ritz
        // vectors are U = Q Vr, V = Z Ur.
        let (z, r) = thin_qr(&matrix.transpose_mul_dense(&q)?);
        let core = jacobi_svd(&r);
        let az = matrix.mul_dense(&z)?;

        let ur_k = core.u.leading_columns(k);
        let sigma: Vec<T> = core.s[..k].to_vec();
        let done = iterations >= max_iterations
            || (iterations >= quality.power_iterations.max(1) && {
                let u = q.matmul(&core.v.leading_columns(k));
                let av = az.matmul(&ur_k);
                max_residual(&av, &u, &sigma) <= tolerance * sigma[0].as_f64()
            });
        if done {
            let mut u = q.matmul(&core.v.leading_columns(k));
            let mut v = z.matmul(&ur_k);
            canonicalize_signs(&mut u, &mut v);
            if iterations >= max_iterations && iterations > quality.power_iterations {
                log::debug!("truncated_svd stopped at the iteration cap ({max_iterations})");
            }
            return Ok(SvdFactors { u, sigma, v, iterations });
        }
        q = thin_qr(&az).0;
    }
}

fn max_residual<T: Scalar>(av: &Dense<T>, u: &Dense<T>, sigma: &[T]) -> f64 {
    let k = sigma.len();
    let mut sq = vec![0.0f64; k];
    for i in 0..av.rows() {
        for (c, (&a, &b)) in av.row(i).iter().zip(u.row(i)).enumerate() {
            let d = (a - sigma[c] * b).as_f64();
            sq[c] += d * d;
        }
    }
    sq.into_iter().fold(0.0, f64::max).sqrt()
}

/// Makes the first clearly nonzero coordinate of each left vector
/// non-negative, flipping the paired right vector with it.
fn canonicalize_signs<T: Scalar>(u: &mut Dense<T>, v: &mut Dense<T>) {
    for c in 0..u.cols() {
        let column = u.column(c);
        let scale = column.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
        let threshold = scale * T::epsilon().sqrt();
        let flip = column.iter().find(|x| x.abs() > threshold).is_some_and(|&x| x < T::zero());
        if flip {
            for i in 0..u.rows() {
                u[(i, c)] = -u[(i, c)];
            }
            for i in 0..v.rows() {
                v[(i, c)] = -v[(i, c)];
            }
        }
    }
}

/// `matrix * v`: the sparse-dense product behind the Gramian-diagonal
/// correction, summed in CSR order.
pub fn project_columns<T: Scalar>(matrix: &SparseMatrix<T>, v: &Dense<T>) -> Result<Dense<T>> {
    matrix.mul_dense(v)
}
