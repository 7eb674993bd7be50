//! Immutable sparse rating matrix.
//!
//! Entries are stored in CSR order (row-major, columns ascending within a
//! row); that order is the canonical order of the observed set everywhere
//! else in the crate. A CSC mirror backs transpose products.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stored in place of a timestamp that the input did not provide.
pub const MISSING_TIMESTAMP: i64 = i64::MIN;

/// Position of a cell in the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry<T> {
    pub row: usize,
    pub col: usize,
    pub value: T,
    pub timestamp: Option<i64>,
}

impl<T> Entry<T> {
    pub fn cell(&self) -> Cell {
        Cell::new(self.row, self.col)
    }
}

/// Bijection between opaque string tokens and dense indices, in
/// first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenIndex {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl TokenIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tokens "0", "1", ..., "n-1".
    pub fn numeric(n: usize) -> Self {
        let mut index = Self::new();
        for i in 0..n {
            index.intern(&i.to_string());
        }
        index
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut index = Self::new();
        for token in tokens {
            let before = index.len();
            if index.intern(&token) != before {
                return Err(Error::InvalidArgument(format!("duplicate token {token:?}")));
            }
        }
        Ok(index)
    }

    /// Returns the index of `token`, assigning the next one if unseen.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.lookup.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.lookup.insert(token.to_owned(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SparseMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    timestamps: Vec<i64>,
    col_ptr: Vec<usize>,
    csc_row: Vec<usize>,
    csc_pos: Vec<usize>,
    users: Arc<TokenIndex>,
    items: Arc<TokenIndex>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds a matrix from entries in any order. Duplicate cells,
    /// out-of-range indices and non-finite values are rejected.
    pub fn from_entries(users: Arc<TokenIndex>, items: Arc<TokenIndex>, mut entries: Vec<Entry<T>>) -> Result<Self> {
        let (n_rows, n_cols) = (users.len(), items.len());
        for e in &entries {
            if e.row >= n_rows || e.col >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) outside {n_rows}x{n_cols} matrix",
                    e.row, e.col
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::NumericInput(format!("value at ({}, {}) is {}", e.row, e.col, e.value)));
            }
        }
        entries.sort_unstable_by_key(|e| (e.row, e.col));
        if let Some(w) = entries.windows(2).find(|w| w[0].cell() == w[1].cell()) {
            return Err(Error::InvalidArgument(format!("duplicate entry at ({}, {})", w[0].row, w[0].col)));
        }

        let nnz = entries.len();
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut timestamps = Vec::with_capacity(nnz);
        for e in &entries {
            row_ptr[e.row + 1] += 1;
            col_idx.push(e.col);
            values.push(e.value);
            timestamps.push(e.timestamp.unwrap_or(MISSING_TIMESTAMP));
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self::assemble(n_rows, n_cols, row_ptr, col_idx, values, timestamps, users, items))
    }

    /// Numeric token maps, no timestamps.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self> {
        let entries = triplets
            .into_iter()
            .map(|(row, col, value)| Entry { row, col, value, timestamp: None })
            .collect();
        Self::from_entries(Arc::new(TokenIndex::numeric(n_rows)), Arc::new(TokenIndex::numeric(n_cols)), entries)
    }

    /// Every nonzero of `dense` becomes an entry.
    pub fn from_dense(dense: &Dense<T>) -> Result<Self> {
        let mut triplets = Vec::new();
        for i in 0..dense.rows() {
            for j in 0..dense.cols() {
                let x = dense[(i, j)];
                if x != T::zero() {
                    triplets.push((i, j, x));
                }
            }
        }
        Self::from_triplets(dense.rows(), dense.cols(), triplets)
    }

    /// New matrix over the same index maps.
    pub fn with_entries(&self, entries: Vec<Entry<T>>) -> Result<Self> {
        Self::from_entries(Arc::clone(&self.users), Arc::clone(&self.items), entries)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
        timestamps: Vec<i64>,
        users: Arc<TokenIndex>,
        items: Arc<TokenIndex>,
    ) -> Self {
        let nnz = col_idx.len();
        let mut col_ptr = vec![0usize; n_cols + 1];
        for &c in &col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut csc_row = vec![0usize; nnz];
        let mut csc_pos = vec![0usize; nnz];
        for r in 0..n_rows {
            for (p, &c) in col_idx.iter().enumerate().take(row_ptr[r + 1]).skip(row_ptr[r]) {
                let slot = next[c];
                csc_row[slot] = r;
                csc_pos[slot] = p;
                next[c] += 1;
            }
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values, timestamps, col_ptr, csc_row, csc_pos, users, items }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Number of cells not in the observed set.
    pub fn n_unobserved(&self) -> u128 {
        self.n_rows as u128 * self.n_cols as u128 - self.nnz() as u128
    }

    pub fn users(&self) -> &Arc<TokenIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<TokenIndex> {
        &self.items
    }

    pub fn row_range(&self, row: usize) -> Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn row_len(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn col_len(&self, col: usize) -> usize {
        self.col_ptr[col + 1] - self.col_ptr[col]
    }

    /// CSR positions of the entries in column `col`, by ascending row.
    pub fn col_positions(&self, col: usize) -> &[usize] {
        &self.csc_pos[self.col_ptr[col]..self.col_ptr[col + 1]]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Row index of the entry at CSR position `pos`.
    pub fn row_of(&self, pos: usize) -> usize {
        self.row_ptr.partition_point(|&start| start <= pos) - 1
    }

    pub fn cell(&self, pos: usize) -> Cell {
        Cell::new(self.row_of(pos), self.col_idx[pos])
    }

    pub fn entry(&self, pos: usize) -> Entry<T> {
        Entry {
            row: self.row_of(pos),
            col: self.col_idx[pos],
            value: self.values[pos],
            timestamp: self.timestamp(pos),
        }
    }

    pub fn timestamp(&self, pos: usize) -> Option<i64> {
        match self.timestamps[pos] {
            MISSING_TIMESTAMP => None,
            t => Some(t),
        }
    }

    /// True when every entry carries a timestamp.
    pub fn has_timestamps(&self) -> bool {
        self.timestamps.iter().all(|&t| t != MISSING_TIMESTAMP)
    }

    /// Entries in CSR order.
    pub fn entries(&self) -> impl Iterator<Item = Entry<T>> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            self.row_range(r).map(move |p| Entry {
                row: r,
                col: self.col_idx[p],
                value: self.values[p],
                timestamp: self.timestamp(p),
            })
        })
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row_range(r).map(move |p| Cell::new(r, self.col_idx[p])))
    }

    /// CSR position of `(row, col)` if observed.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.n_rows {
            return None;
        }
        let range = self.row_range(row);
        let start = range.start;
        self.col_idx[range].binary_search(&col).ok().map(|i| start + i)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.position(row, col).is_some()
    }

    /// Value at `(row, col)`, zero outside the observed set.
    pub fn get(&self, row: usize, col: usize) -> T {
        self.position(row, col).map(|p| self.values[p]).unwrap_or_else(T::zero)
    }

    pub fn to_dense(&self) -> Dense<T> {
        let mut out = Dense::zeros(self.n_rows, self.n_cols);
        for e in self.entries() {
            out[(e.row, e.col)] = e.value;
        }
        out
    }

    /// `self * x` with `x` of shape `n_cols x l`. Each output row is summed in
    /// CSR order, so the result does not depend on the thread count.
    pub fn mul_dense(&self, x: &Dense<T>) -> Result<Dense<T>> {
        if x.rows() != self.n_cols {
            return Err(Error::InvalidArgument(format!(
                "cannot multiply {}x{} matrix by {}x{} block",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let l = x.cols();
        let mut out = Dense::zeros(self.n_rows, l);
        if l == 0 {
            return Ok(out);
        }
        out.as_mut_slice().par_chunks_mut(l).enumerate().for_each(|(r, out_row)| {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.values[p];
                for (o, &b) in out_row.iter_mut().zip(x.row(self.col_idx[p])) {
                    *o += a * b;
                }
            }
        });
        Ok(out)
    }

    /// `self^T * y` with `y` of shape `n_rows x l`, via the CSC mirror.
    pub fn transpose_mul_dense(&self, y: &Dense<T>) -> Result<Dense<T>> {
        if y.rows() != self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "cannot multiply transpose of {}x{} matrix by {}x{} block",
                self.n_rows,
                self.n_cols,
                y.rows(),
                y.cols()
            )));
        }
        let l = y.cols();
        let mut out = Dense::zeros(self.n_cols, l);
        if l == 0 {
            return Ok(out);
        }
        out.as_mut_slice().par_chunks_mut(l).enumerate().for_each(|(c, out_row)| {
            for q in self.col_ptr[c]..self.col_ptr[c + 1] {
                let a = self.values[self.csc_pos[q]];
                for (o, &b) in out_row.iter_mut().zip(y.row(self.csc_row[q])) {
                    *o += a * b;
                }
            }
        });
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> T {
        crate::scalar::compensated_sum(self.values.iter().map(|&v| v * v)).sqrt()
    }

    /// Same structure and maps, values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> SparseMatrix<U> {
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            timestamps: self.timestamps.clone(),
            col_ptr: self.col_ptr.clone(),
            csc_row: self.csc_row.clone(),
            csc_pos: self.csc_pos.clone(),
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
        }
    }

    /// Identical structure, values and timestamps (index maps compared by token).
    pub fn same_entries(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
            && self.timestamps == other.timestamps
    }

    /// Binary cache, `SCM1`.
    ///
    /// Layout (little-endian): magic `SCM1`, u32 version, u64 n_rows,
    /// u64 n_cols, u64 nnz, u64 flags (bit 0: timestamps present), then
    /// row_ptr (n_rows+1 x u64), col_idx (nnz x u64), values (nnz x f64),
    /// timestamps (nnz x i64, only if flagged), then the user and item
    /// tokens, each as u64 byte length followed by UTF-8 bytes.
    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCM1", 1)?;
        binio::write_u64(w, self.n_rows as u64)?;
        binio::write_u64(w, self.n_cols as u64)?;
        binio::write_u64(w, self.nnz() as u64)?;
        let any_timestamp = self.timestamps.iter().any(|&t| t != MISSING_TIMESTAMP);
        binio::write_u64(w, any_timestamp as u64)?;
        for &p in &self.row_ptr {
            binio::write_u64(w, p as u64)?;
        }
        for &c in &self.col_idx {
            binio::write_u64(w, c as u64)?;
        }
        for &v in &self.values {
            binio::write_f64(w, v.as_f64())?;
        }
        if any_timestamp {
            for &t in &self.timestamps {
                binio::write_i64(w, t)?;
            }
        }
        for token in self.users.tokens().iter().chain(self.items.tokens()) {
            binio::write_str(w, token)?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"SCM1", 1)?;
        let n_rows = binio::read_usize(r)?;
        let n_cols = binio::read_usize(r)?;
        let nnz = binio::read_usize(r)?;
        let flags = binio::read_u64(r)?;
        let row_ptr = (0..=n_rows).map(|_| binio::read_usize(r)).collect::<Result<Vec<_>>>()?;
        if row_ptr.first() != Some(&0) || row_ptr.last() != Some(&nnz) || row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("row pointer array is inconsistent".into()));
        }
        let col_idx = (0..nnz).map(|_| binio::read_usize(r)).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz).map(|_| binio::read_f64(r).map(T::lit)).collect::<Result<Vec<_>>>()?;
        let timestamps = if flags & 1 == 1 {
            (0..nnz).map(|_| binio::read_i64(r)).collect::<Result<Vec<_>>>()?
        } else {
            vec![MISSING_TIMESTAMP; nnz]
        };
        let users = TokenIndex::from_tokens((0..n_rows).map(|_| binio::read_str(r)).collect::<Result<Vec<_>>>()?)?;
        let items = TokenIndex::from_tokens((0..n_cols).map(|_| binio::read_str(r)).collect::<Result<Vec<_>>>()?)?;
        for row in 0..n_rows {
            let cols = &col_idx[row_ptr[row]..row_ptr[row + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::Format(format!("row {row} has unsorted or out-of-range columns")));
            }
        }
        Ok(Self::assemble(n_rows, n_cols, row_ptr, col_idx, values, timestamps, Arc::new(users), Arc::new(items)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMatrix<f64> {
        SparseMatrix::from_triplets(3, 4, vec![(2, 1, 4.0), (0, 3, 1.0), (0, 0, 2.0), (1, 2, -3.0)]).unwrap()
    }

    #[test]
    fn entries_come_back_in_csr_order() {
        let m = small();
        let cells: Vec<_> = m.cells().map(|c| (c.row, c.col)).collect();
        assert_eq!(cells, vec![(0, 0), (0, 3), (1, 2), (2, 1)]);
        assert_eq!(m.get(1, 2), -3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.row_of(3), 2);
        assert_eq!(m.n_unobserved(), 8);
    }

    #[test]
    fn duplicates_and_bounds_are_rejected() {
        let dup = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]);
        assert!(matches!(dup, Err(Error::InvalidArgument(_))));
        let oob = SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]);
        assert!(matches!(oob, Err(Error::InvalidArgument(_))));
        let nan = SparseMatrix::from_triplets(2, 2, vec![(0, 0, f64::NAN)]);
        assert!(matches!(nan, Err(Error::NumericInput(_))));
    }

    #[test]
    fn products_match_dense() {
        let m = small();
        let x = Dense::from_fn(4, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let got = m.mul_dense(&x).unwrap();
        let want = m.to_dense().matmul(&x);
        assert_eq!(got, want);
        let y = Dense::from_fn(3, 2, |i, j| (i + j) as f64 - 1.0);
        let got = m.transpose_mul_dense(&y).unwrap();
        let want = m.to_dense().transpose().matmul(&y);
        assert_eq!(got, want);
        assert!(m.mul_dense(&y).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let users = Arc::new(TokenIndex::from_tokens(["a".to_string(), "b".to_string()]).unwrap());
        let items = Arc::new(TokenIndex::from_tokens(["x".to_string(), "y".to_string()]).unwrap());
        let m = SparseMatrix::from_entries(
            users,
            items,
            vec![
                Entry { row: 0, col: 1, value: 4.5, timestamp: Some(10) },
                Entry { row: 1, col: 0, value: 1.0, timestamp: None },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SCM1");
        let back: SparseMatrix<f64> = SparseMatrix::read_cache(&mut buf.as_slice()).unwrap();
        assert!(back.same_entries(&m));
        assert_eq!(back.users().token(1), "b");
        assert_eq!(back.items().token(0), "x");

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(SparseMatrix::<f64>::read_cache(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
