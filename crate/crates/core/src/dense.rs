//! Small dense kernels: row-major matrices, Householder QR and one-sided
//! Jacobi SVD. These only ever see tall-thin blocks (n x l with l ~ k + 10)
//! or l x l cores, so simplicity wins over blocking.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::scalar::{CompensatedSum, Scalar};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

// Below this many output cells the rayon split costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 14;

impl<T: Scalar> Dense<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = T::one();
        }
        out
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense buffer length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Standard normal entries, drawn in f64 so f32 and f64 see the same stream.
    pub fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Keeps the leading `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        assert!(k <= self.cols);
        Self::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn frobenius_norm(&self) -> T {
        let mut acc = CompensatedSum::new();
        for &x in &self.data {
            acc.add(x * x);
        }
        acc.value().sqrt()
    }

    pub fn column_norms(&self) -> Vec<T> {
        let mut acc = vec![CompensatedSum::new(); self.cols];
        for i in 0..self.rows {
            for (a, &x) in acc.iter_mut().zip(self.row(i)) {
                a.add(x * x);
            }
        }
        acc.into_iter().map(|a| a.value().sqrt()).collect()
    }

    /// `self * other`. Rows of the output are independent, so the result is
    /// identical for any thread count.
    pub fn matmul(&self, other: &Dense<T>) -> Dense<T> {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Dense::zeros(self.rows, other.cols);
        if out.cols == 0 {
            return out;
        }
        let kernel = |(i, out_row): (usize, &mut [T])| {
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(p)) {
                    *o += a * b;
                }
            }
        };
        if out.data.len() >= PAR_THRESHOLD {
            out.data.par_chunks_mut(other.cols).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(other.cols).enumerate().for_each(kernel);
        }
        out
    }

    /// `self^T * other`, accumulated row by row in a fixed order.
    pub fn transpose_matmul(&self, other: &Dense<T>) -> Dense<T> {
        assert_eq!(self.rows, other.rows, "transpose_matmul dimension mismatch");
        let mut out = Dense::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let b = other.row(i);
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &bv) in out.row_mut(p).iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Dense<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Dense<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin Householder QR of a tall matrix (`rows >= cols`).
///
/// `Q` always has orthonormal columns, including when `a` is rank deficient:
/// a zero pivot column yields the identity reflector and the corresponding
/// column of `Q` is completed from the reflectors alone.
pub fn thin_qr<T: Scalar>(a: &Dense<T>) -> (Dense<T>, Dense<T>) {
    let (n, l) = (a.rows(), a.cols());
    assert!(n >= l, "thin_qr expects a tall matrix, got {n}x{l}");
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(l);
    let two = T::lit(2.0);
    let mut w = vec![T::zero(); l];

    for j in 0..l {
        let mut norm = CompensatedSum::new();
        for i in j..n {
            let x = work[(i, j)];
            norm.add(x * x);
        }
        let norm = norm.value().sqrt();
        let mut v: Vec<T> = (j..n).map(|i| work[(i, j)]).collect();
        if norm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= T::zero() { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if vnorm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        apply_reflector(&mut work, &v, j, j, &mut w, two);
        reflectors.push(v);
    }

    let r = Dense::from_fn(l, l, |i, j| if i <= j { work[(i, j)] } else { T::zero() });

    let mut q = Dense::zeros(n, l);
    for i in 0..l {
        q[(i, i)] = T::one();
    }
    for j in (0..l).rev() {
        let v = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        apply_reflector(&mut q, v, j, j, &mut w, two);
    }
    (q, r)
}

// Applies H = I - 2 v v^T (v acting on rows start_row..) to columns start_col..
fn apply_reflector<T: Scalar>(
    m: &mut Dense<T>,
    v: &[T],
    start_row: usize,
    start_col: usize,
    w: &mut [T],
    two: T,
) {
    let cols = m.cols();
    let w = &mut w[..cols];
    w.iter_mut().for_each(|x| *x = T::zero());
    for (offset, &vi) in v.iter().enumerate() {
        if vi == T::zero() {
            continue;
        }
        let row = m.row(start_row + offset);
        for c in start_col..cols {
            w[c] += vi * row[c];
        }
    }
    for (offset, &vi) in v.iter().enumerate() {
        if vi == T::zero() {
            continue;
        }
        let scale = two * vi;
        let row = m.row_mut(start_row + offset);
        for c in start_col..cols {
            row[c] -= scale * w[c];
        }
    }
}

/// Singular value decomposition `a = U diag(s) V^T` of a matrix with
/// `rows >= cols`, by one-sided Jacobi rotations.
///
/// Singular values come back sorted non-increasing. `U` is completed to an
/// orthonormal set when `a` is rank deficient.
pub struct JacobiSvd<T> {
    pub u: Dense<T>,
    pub s: Vec<T>,
    pub v: Dense<T>,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 80;

pub fn jacobi_svd<T: Scalar>(a: &Dense<T>) -> JacobiSvd<T> {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "jacobi_svd expects rows >= cols, got {m}x{n}");
    // Work on columns stored as rows: g[j] is column j of a.
    let mut g: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let tol = T::epsilon() * T::lit(m.max(1) as f64);

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = dot3(&g[p], &g[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = g.iter().map(|col| col.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

    let smax = order.first().map(|&i| norms[i]).unwrap_or(T::zero());
    let cutoff = smax * T::epsilon() * T::lit(m.max(1) as f64);

    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        s.push(sigma);
        v_cols.push(v[j].clone());
        if sigma > cutoff && sigma > T::zero() {
            u_cols.push(g[j].iter().map(|&x| x / sigma).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_orthonormal(&mut u_cols, m);

    let u = Dense::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Dense::from_fn(n, n, |i, j| v_cols[j][i]);
    JacobiSvd { u, s, v, sweeps }
}

fn dot3<T: Scalar>(x: &[T], y: &[T]) -> (T, T, T) {
    let (mut a, mut b, mut c) = (T::zero(), T::zero(), T::zero());
    for (&xi, &yi) in x.iter().zip(y) {
        a += xi * xi;
        b += yi * yi;
        c += xi * yi;
    }
    (a, b, c)
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (gp, gq) = (&mut left[p], &mut right[0]);
    for (x, y) in gp.iter_mut().zip(gq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

// Fills empty slots with unit vectors orthogonal to everything before them,
// using Gram-Schmidt (twice) over the standard basis.
fn complete_orthonormal<T: Scalar>(cols: &mut [Vec<T>], dim: usize) {
    let mut candidate = 0;
    for j in 0..cols.len() {
        if !cols[j].is_empty() {
            continue;
        }
        loop {
            assert!(candidate < dim, "cannot complete orthonormal basis");
            let mut e = vec![T::zero(); dim];
            e[candidate] = T::one();
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d = other.iter().zip(&e).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    for (x, &o) in e.iter_mut().zip(other) {
                        *x -= d * o;
                    }
                }
            }
            let norm = e.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
            if norm > T::lit(0.5) {
                cols[j] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
