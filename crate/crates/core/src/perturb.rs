//! Perturbed matrices: value shuffling inside the observed set and
//! relocation of observed entries onto empty cells.

use std::collections::{HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Cell, Entry, SparseMatrix};
use crate::rng::{seeded, stream};
use crate::scalar::{compensated_sum, Scalar};
use crate::split::{EntryKind, EntrySet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    /// Fraction of observed entries perturbed.
    pub p: f64,
    /// Share of the perturbed entries that are value-shuffled; the rest are
    /// relocated.
    pub alpha: f64,
    pub time_weighted: bool,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self { p: 0.1, alpha: 0.7, time_weighted: false, epsilon: 1e-9, seed: 0 }
    }
}

impl PerturbationParams {
    pub fn new(p: f64, alpha: f64, seed: u64) -> Self {
        Self { p, alpha, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Floor that ignores representation error just below an integer, so that
/// 0.7 * 0.1 * 100 counts as 7 whichever way the product rounds.
pub(crate) fn floor_count(x: f64) -> usize {
    (x * (1.0 + 1e-12)).floor().max(0.0) as usize
}

/// The sets a perturbation touches and how values move between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub omega_val: EntrySet,
    pub omega_remove: EntrySet,
    pub omega_add: EntrySet,
    /// `omega_val[i]` receives the value held by `omega_val[value_permutation[i]]`.
    pub value_permutation: Vec<usize>,
    /// Pairs `(removed, added)`; the removed entry's value and timestamp move
    /// to the added cell.
    pub relocation_map: Vec<(Cell, Cell)>,
    pub params: PerturbationParams,
}

impl PerturbationPlan {
    /// A plan that touches nothing. Applying it returns the matrix unchanged.
    pub fn empty(params: PerturbationParams) -> Self {
        Self {
            omega_val: EntrySet::empty(EntryKind::Val),
            omega_remove: EntrySet::empty(EntryKind::Remove),
            omega_add: EntrySet::empty(EntryKind::Add),
            value_permutation: Vec::new(),
            relocation_map: Vec::new(),
            params,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.omega_val.is_empty() && self.omega_remove.is_empty()
    }

    /// Every perturbed position: value-shuffled, vacated and newly filled.
    pub fn pert_set(&self) -> EntrySet {
        let positions = self.omega_val.iter().chain(self.omega_remove.iter()).chain(self.omega_add.iter()).collect();
        EntrySet::new(EntryKind::Pert, positions)
    }

    pub fn n_pert(&self) -> usize {
        self.omega_val.len() + self.omega_remove.len() + self.omega_add.len()
    }
}

/// Recency sampling weights, proportional to how far each timestamp sits
/// above the minimum.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWeights {
    pub weights: Vec<f64>,
    /// Set when every raw weight was zero and the uniform distribution was
    /// returned instead.
    pub uniform_fallback: bool,
}

pub fn time_weights(timestamps: &[i64], epsilon: f64) -> Result<TimeWeights> {
    if timestamps.is_empty() {
        return Err(Error::InvalidArgument("time weights of an empty sequence".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let lo = *timestamps.iter().min().unwrap_or(&0);
    let hi = *timestamps.iter().max().unwrap_or(&0);
    let span = (hi as i128 - lo as i128) as f64 + epsilon;
    let raw: Vec<f64> = timestamps.iter().map(|&t| (t as i128 - lo as i128) as f64 / span).collect();
    let total = compensated_sum(raw.iter().copied());
    if total <= 0.0 {
        let w = 1.0 / timestamps.len() as f64;
        return Ok(TimeWeights { weights: vec![w; timestamps.len()], uniform_fallback: true });
    }
    Ok(TimeWeights { weights: raw.into_iter().map(|w| w / total).collect(), uniform_fallback: false })
}

/// Draws the value, removal and insertion sets for a whole-matrix
/// perturbation.
pub fn select_perturbation_sets<T: Scalar>(matrix: &SparseMatrix<T>, params: &PerturbationParams) -> Result<PerturbationPlan> {
    params.validate()?;
    let nnz = matrix.nnz();
    let budget = params.p * nnz as f64;
    if floor_count(budget) < 1 {
        return Err(Error::InvalidArgument(format!("p = {} perturbs no entry of a {nnz}-entry matrix", params.p)));
    }
    let n_val = floor_count(params.alpha * budget);
    let n_remove = floor_count((1.0 - params.alpha) * budget);
    if n_val + n_remove > nnz {
        return Err(Error::InvalidArgument(format!("{} perturbed entries requested from {nnz}", n_val + n_remove)));
    }
    let candidates: Vec<usize> = (0..nnz).collect();
    let mut rng = seeded(params.seed, stream::PERTURBATION);
    build_plan(matrix, &candidates, n_val, n_remove, params, &mut rng)
}

/// Plan for one scoring fold: the fold is the perturbed set, an
/// `alpha` share of it is value-shuffled and the rest relocated.
pub fn fold_perturbation_plan<T: Scalar>(
    matrix: &SparseMatrix<T>,
    fold: &EntrySet,
    fold_index: usize,
    params: &PerturbationParams,
) -> Result<PerturbationPlan> {
    params.validate()?;
    let size = fold.len();
    let n_val = floor_count(params.alpha * size as f64);
    if n_val == 0 && floor_count((1.0 - params.alpha) * size as f64) == 0 {
        return Err(Error::InvalidArgument(format!(
            "a fold of {size} entries cannot be split with alpha = {}",
            params.alpha
        )));
    }
    let candidates = fold
        .iter()
        .map(|c| {
            matrix
                .position(c.row, c.col)
                .ok_or_else(|| Error::InvalidArgument(format!("fold cell {c:?} is not observed")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded(params.seed, stream::FOLD_BASE + fold_index as u64);
    build_plan(matrix, &candidates, n_val, size - n_val, params, &mut rng)
}

fn build_plan<T: Scalar>(
    matrix: &SparseMatrix<T>,
    candidates: &[usize],
    n_val: usize,
    n_remove: usize,
    params: &PerturbationParams,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbationPlan> {
    if (n_remove as u128) > matrix.n_unobserved() {
        return Err(Error::CannotRelocate {
            requested: n_remove,
            reason: format!("only {} empty cells", matrix.n_unobserved()),
        });
    }
    let chosen = if params.time_weighted {
        if !matrix.has_timestamps() {
            return Err(Error::Unsupported("time-weighted sampling needs a timestamp on every interaction".into()));
        }
        let stamps: Vec<i64> = candidates.iter().map(|&p| matrix.timestamp(p).unwrap_or_default()).collect();
        let weights = time_weights(&stamps, params.epsilon)?;
        weighted_sample(candidates, &weights.weights, n_val + n_remove, rng)
    } else {
        index::sample(rng, candidates.len(), n_val + n_remove).into_iter().map(|i| candidates[i]).collect()
    };

    let mut val_pos = chosen[..n_val].to_vec();
    let mut remove_pos = chosen[n_val..].to_vec();
    val_pos.sort_unstable();
    remove_pos.sort_unstable();

    let mut permutation: Vec<usize> = (0..n_val).collect();
    permutation.shuffle(rng);

    let added = sample_unobserved(matrix, n_remove, rng)?;
    let removed: Vec<Cell> = remove_pos.iter().map(|&p| matrix.cell(p)).collect();
    Ok(PerturbationPlan {
        omega_val: EntrySet::new(EntryKind::Val, val_pos.iter().map(|&p| matrix.cell(p)).collect()),
        omega_remove: EntrySet::new(EntryKind::Remove, removed.clone()),
        omega_add: EntrySet::new(EntryKind::Add, added.clone()),
        value_permutation: permutation,
        relocation_map: removed.into_iter().zip(added).collect(),
        params: *params,
    })
}

/// Weighted sampling without replacement by exponential race: each item
/// draws `-ln(u) / w` and the smallest keys win. Zero-weight items only
/// fill slots that the positive-weight items cannot.
fn weighted_sample(items: &[usize], weights: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed = Vec::with_capacity(items.len());
    let mut zero_pool = Vec::new();
    for (&item, &w) in items.iter().zip(weights) {
        if w > 0.0 {
            let u: f64 = rng.random();
            keyed.push((-(1.0 - u).ln() / w, item));
        } else {
            zero_pool.push(item);
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed.into_iter().take(count).map(|(_, item)| item).collect();
    if out.len() < count {
        let missing = count - out.len();
        out.extend(index::sample(rng, zero_pool.len(), missing).into_iter().map(|i| zero_pool[i]));
    }
    out
}

/// Uniform sample of distinct empty cells. Small complements are
/// enumerated; large ones use rejection against the observed set.
fn sample_unobserved<T: Scalar>(matrix: &SparseMatrix<T>, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Cell>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (n, m) = (matrix.n_rows(), matrix.n_cols());
    let total = n as u128 * m as u128;
    if matrix.n_unobserved() * 2 < total {
        let empty: Vec<Cell> =
            (0..n).flat_map(|r| (0..m).map(move |c| Cell::new(r, c))).filter(|c| !matrix.contains(c.row, c.col)).collect();
        return Ok(index::sample(rng, empty.len(), count).into_iter().map(|i| empty[i]).collect());
    }
    let mut picked = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    let max_draws = count.saturating_mul(100);
    for _ in 0..max_draws {
        let cell = Cell::new(rng.random_range(0..n), rng.random_range(0..m));
        if !matrix.contains(cell.row, cell.col) && seen.insert(cell) {
            picked.push(cell);
            if picked.len() == count {
                return Ok(picked);
            }
        }
    }
    Err(Error::CannotRelocate {
        requested: count,
        reason: format!("rejection sampling found only {} empty cells in {max_draws} draws", picked.len()),
    })
}

/// Builds the perturbed matrix. Unperturbed entries keep value and
/// timestamp; shuffled cells keep their timestamp.
pub fn apply_perturbation<T: Scalar>(matrix: &SparseMatrix<T>, plan: &PerturbationPlan) -> Result<SparseMatrix<T>> {
    if plan.is_empty() {
        return Ok(matrix.clone());
    }
    check_plan(matrix, plan)?;
    let locate = |c: Cell| matrix.position(c.row, c.col).expect("plan cells were checked");
    let val_pos: Vec<usize> = plan.omega_val.iter().map(locate).collect();

    let mut new_value: HashMap<usize, T> = HashMap::with_capacity(val_pos.len());
    for (i, &p) in val_pos.iter().enumerate() {
        new_value.insert(p, matrix.values()[val_pos[plan.value_permutation[i]]]);
    }
    let removed: HashSet<usize> = plan.omega_remove.iter().map(locate).collect();

    let mut entries: Vec<Entry<T>> = Vec::with_capacity(matrix.nnz());
    for p in 0..matrix.nnz() {
        if removed.contains(&p) {
            continue;
        }
        let mut e = matrix.entry(p);
        if let Some(&v) = new_value.get(&p) {
            e.value = v;
        }
        entries.push(e);
    }
    for &(from, to) in &plan.relocation_map {
        let source = matrix.entry(locate(from));
        entries.push(Entry { row: to.row, col: to.col, value: source.value, timestamp: source.timestamp });
    }
    matrix.with_entries(entries)
}

fn check_plan<T: Scalar>(matrix: &SparseMatrix<T>, plan: &PerturbationPlan) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidArgument(format!("perturbation plan does not fit this matrix: {msg}")));
    let mut perm = plan.value_permutation.clone();
    perm.sort_unstable();
    if perm.len() != plan.omega_val.len() || perm.iter().enumerate().any(|(i, &x)| i != x) {
        return bad("value permutation is not a bijection over the value set".into());
    }
    if plan.relocation_map.len() != plan.omega_remove.len() || plan.omega_add.len() != plan.omega_remove.len() {
        return bad("relocation map does not pair removal and insertion sets".into());
    }
    let mut seen = HashSet::new();
    for c in plan.omega_val.iter().chain(plan.omega_remove.iter()) {
        if !matrix.contains(c.row, c.col) {
            return bad(format!("{c:?} is not observed"));
        }
        if !seen.insert(c) {
            return bad(format!("{c:?} appears twice"));
        }
    }
    for (c, &(from, to)) in plan.omega_add.iter().zip(&plan.relocation_map) {
        if c != to || c.row >= matrix.n_rows() || c.col >= matrix.n_cols() || matrix.contains(c.row, c.col) {
            return bad(format!("{c:?} is not an empty cell of the insertion set"));
        }
        if !seen.insert(c) || !matrix.contains(from.row, from.col) {
            return bad(format!("relocation {from:?} -> {to:?} is inconsistent"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::matrix::TokenIndex;

    fn sparse_100() -> SparseMatrix<f64> {
        // 100 entries on a 20x20 grid.
        SparseMatrix::from_triplets(20, 20, (0..100).map(|i| (i / 5, (i * 7) % 20, 1.0 + (i % 5) as f64))).unwrap()
    }

    #[test]
    fn weights_follow_recency() {
        let w = time_weights(&[0, 5, 10], 1e-9).unwrap();
        for (got, want) in w.weights.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!(!w.uniform_fallback);
    }

    #[test]
    fn uniform_timestamps_fall_back() {
        let w = time_weights(&[7, 7, 7], 1e-9).unwrap();
        assert!(w.uniform_fallback);
        assert!(w.weights.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn default_quotas() {
        let m = sparse_100();
        let plan = select_perturbation_sets(&m, &PerturbationParams::new(0.1, 0.7, 3)).unwrap();
        assert_eq!(plan.omega_val.len(), 7);
        assert_eq!(plan.omega_remove.len(), 3);
        assert_eq!(plan.omega_add.len(), 3);
        assert_eq!(plan.n_pert(), 13);
    }

    #[test]
    fn pure_value_perturbation() {
        let plan = select_perturbation_sets(&sparse_100(), &PerturbationParams::new(0.1, 1.0, 3)).unwrap();
        assert_eq!(plan.omega_val.len(), 10);
        assert!(plan.omega_remove.is_empty() && plan.omega_add.is_empty());
    }

    #[test]
    fn dense_matrix_cannot_relocate() {
        let m = SparseMatrix::<f64>::from_triplets(3, 3, (0..9).map(|i| (i / 3, i % 3, 1.0))).unwrap();
        let err = select_perturbation_sets(&m, &PerturbationParams::new(0.5, 0.5, 1)).unwrap_err();
        assert!(matches!(err, Error::CannotRelocate { .. }));
    }

    #[test]
    fn too_small_budget_is_rejected() {
        let m = SparseMatrix::<f64>::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap();
        assert!(matches!(select_perturbation_sets(&m, &PerturbationParams::new(0.5, 0.5, 1)), Err(Error::InvalidArgument(_))));
        assert!(PerturbationParams::new(0.0, 0.5, 1).validate().is_err());
        assert!(PerturbationParams::new(0.5, 1.5, 1).validate().is_err());
    }

    #[test]
    fn empty_plan_is_identity() {
        let m = sparse_100();
        let mp = apply_perturbation(&m, &PerturbationPlan::empty(PerturbationParams::default())).unwrap();
        assert!(mp.same_entries(&m));
    }

    #[test]
    fn swapping_two_values() {
        let m = SparseMatrix::<f64>::from_triplets(2, 2, vec![(0, 0, 5.0), (1, 1, 3.0)]).unwrap();
        let mut plan = PerturbationPlan::empty(PerturbationParams::default());
        plan.omega_val = EntrySet::new(EntryKind::Val, vec![Cell::new(0, 0), Cell::new(1, 1)]);
        plan.value_permutation = vec![1, 0];
        let mp = apply_perturbation(&m, &plan).unwrap();
        assert_eq!(mp.get(0, 0), 3.0);
        assert_eq!(mp.get(1, 1), 5.0);
    }

    #[test]
    fn relocation_carries_value_and_timestamp() {
        let m = SparseMatrix::from_entries(
            Arc::new(TokenIndex::numeric(2)),
            Arc::new(TokenIndex::numeric(2)),
            vec![Entry { row: 0, col: 0, value: 4.0, timestamp: Some(9) }],
        )
        .unwrap();
        let mut plan = PerturbationPlan::empty(PerturbationParams::default());
        plan.omega_remove = EntrySet::new(EntryKind::Remove, vec![Cell::new(0, 0)]);
        plan.omega_add = EntrySet::new(EntryKind::Add, vec![Cell::new(1, 0)]);
        plan.relocation_map = vec![(Cell::new(0, 0), Cell::new(1, 0))];
        let mp = apply_perturbation(&m, &plan).unwrap();
        assert_eq!(mp.nnz(), 1);
        assert_eq!(mp.entry(0), Entry { row: 1, col: 0, value: 4.0, timestamp: Some(9) });

        plan.omega_add = EntrySet::new(EntryKind::Add, vec![Cell::new(0, 0)]);
        plan.relocation_map = vec![(Cell::new(0, 0), Cell::new(0, 0))];
        assert!(apply_perturbation(&m, &plan).is_err());
    }

    #[test]
    fn fold_plan_splits_by_alpha() {
        let m = sparse_100();
        let fold = EntrySet::new(EntryKind::Fold, m.cells().take(10).collect());
        let plan = fold_perturbation_plan(&m, &fold, 0, &PerturbationParams::new(0.1, 0.7, 5)).unwrap();
        assert_eq!(plan.omega_val.len(), 7);
        assert_eq!(plan.omega_remove.len(), 3);
        let single = EntrySet::new(EntryKind::Fold, m.cells().take(1).collect());
        assert!(fold_perturbation_plan(&m, &single, 0, &PerturbationParams::new(0.1, 0.5, 5)).is_err());
    }

    #[test]
    fn time_weighting_needs_timestamps() {
        let params = PerturbationParams { time_weighted: true, ..PerturbationParams::new(0.1, 0.7, 1) };
        assert!(matches!(select_perturbation_sets(&sparse_100(), &params), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_weight_shortfall_is_filled() {
        let mut rng = seeded(1, 0);
        // Only two positive weights but four slots.
        let picked = weighted_sample(&[10, 11, 12, 13, 14], &[0.0, 0.5, 0.0, 0.5, 0.0], 4, &mut rng);
        assert_eq!(picked.len(), 4);
        assert!(picked[..2].contains(&11) && picked[..2].contains(&13));
        let unique: HashSet<_> = picked.iter().collect();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = select_perturbation_sets(&sparse_100(), &PerturbationParams::new(0.2, 0.5, 8)).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: PerturbationPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }
}
