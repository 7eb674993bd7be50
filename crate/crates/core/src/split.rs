//! Entry sets, leave-last-out holdout and disjoint fold partitioning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Cell, Entry, SparseMatrix};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Val,
    Remove,
    Add,
    Pert,
    Fold,
    Test,
    Selection,
}

/// Unique cell positions tagged with the role they play.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySet {
    pub kind: EntryKind,
    pub positions: Vec<Cell>,
}

impl EntrySet {
    pub fn new(kind: EntryKind, positions: Vec<Cell>) -> Self {
        debug_assert!(
            {
                let mut sorted = positions.clone();
                sorted.sort_unstable();
                sorted.windows(2).all(|w| w[0] != w[1])
            },
            "EntrySet positions must be unique"
        );
        Self { kind, positions }
    }

    pub fn empty(kind: EntryKind) -> Self {
        Self { kind, positions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        self.positions.iter().copied()
    }
}

/// Leave-last-out split: each user's most recent interaction is held out.
#[derive(Clone, Debug)]
pub struct HoldoutSplit<T> {
    pub train: SparseMatrix<T>,
    /// Held-out entries, one per user with at least one interaction, by row.
    pub test: Vec<Entry<T>>,
}

impl<T: Scalar> HoldoutSplit<T> {
    pub fn test_set(&self) -> EntrySet {
        EntrySet::new(EntryKind::Test, self.test.iter().map(Entry::cell).collect())
    }
}

/// Moves each user's latest interaction (ties: largest column index) to the
/// test side. Train keeps the original index maps, so a user with a single
/// interaction becomes an empty row.
pub fn holdout_last_interaction<T: Scalar>(matrix: &SparseMatrix<T>) -> Result<HoldoutSplit<T>> {
    if !matrix.has_timestamps() {
        return Err(Error::Unsupported("leave-last-out holdout needs a timestamp on every interaction".into()));
    }
    let mut test_pos = Vec::new();
    for row in 0..matrix.n_rows() {
        let latest = matrix.row_range(row).max_by_key(|&p| (matrix.timestamp(p), matrix.col_indices()[p]));
        if let Some(p) = latest {
            test_pos.push(p);
        }
    }
    let mut is_test = vec![false; matrix.nnz()];
    for &p in &test_pos {
        is_test[p] = true;
    }
    let train_entries = (0..matrix.nnz()).filter(|&p| !is_test[p]).map(|p| matrix.entry(p)).collect();
    let train = matrix.with_entries(train_entries)?;
    let test = test_pos.into_iter().map(|p| matrix.entry(p)).collect();
    Ok(HoldoutSplit { train, test })
}

/// Splits the observed set into `n_folds` disjoint folds by a seeded
/// shuffle. Fold sizes differ by at most one; each fold lists its cells in
/// CSR order.
pub fn partition_entries<T: Scalar>(matrix: &SparseMatrix<T>, n_folds: usize, seed: u64) -> Result<Vec<EntrySet>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    let nnz = matrix.nnz();
    if n_folds > nnz {
        return Err(Error::InvalidArgument(format!("{n_folds} folds requested for {nnz} entries")));
    }
    let mut order: Vec<usize> = (0..nnz).collect();
    order.shuffle(&mut seeded(seed, stream::PARTITION));

    let base = nnz / n_folds;
    let extra = nnz % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let mut members = order[start..start + size].to_vec();
        members.sort_unstable();
        folds.push(EntrySet::new(EntryKind::Fold, members.into_iter().map(|p| matrix.cell(p)).collect()));
        start += size;
    }
    Ok(folds)
}
