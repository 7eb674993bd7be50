//! Target-size subsampling of an interaction matrix: user filtering and
//! sampling, item-support pruning, a saturation repair, and truncation to
//! an exact interaction budget.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Entry, SparseMatrix, TokenIndex};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleParams {
    pub n_target: usize,
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for SubsampleParams {
    fn default() -> Self {
        Self { n_target: 100_000, min_user_interactions: 5, min_item_interactions: 2, seed: 0, n_samples: 3 }
    }
}

impl SubsampleParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_target", self.n_target),
            ("min_user_interactions", self.min_user_interactions),
            ("min_item_interactions", self.min_item_interactions),
            ("n_samples", self.n_samples),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidArgument(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

/// Counts recorded at every step of one subsampling run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub input_interactions: usize,
    pub input_users: usize,
    pub input_items: usize,
    pub users_below_min: usize,
    /// Mean interactions per user over all users with any interaction.
    pub mean_interactions_original: f64,
    /// Mean over the users that passed the filter; this one sets the sample size.
    pub mean_interactions_filtered: f64,
    pub users_sampled: usize,
    /// Users added beyond the first estimate because pruning and saturation
    /// repair left the sample short of the target.
    pub users_added_for_shortfall: usize,
    pub items_pruned: usize,
    pub interactions_pruned: usize,
    pub users_emptied_by_pruning: usize,
    pub pruning_passes: usize,
    pub interactions_after_pruning: usize,
    pub saturated_users: usize,
    pub interactions_injected: usize,
    pub users_removed_saturated: usize,
    pub interactions_after_saturation: usize,
    pub interactions_truncated: usize,
    pub injected_truncated: usize,
    pub output_interactions: usize,
    pub output_users: usize,
    pub output_items: usize,
    /// Items left below the support threshold by truncation.
    pub items_below_min_after_truncation: usize,
    pub saturated_users_after_truncation: usize,
}

#[derive(Clone, Debug)]
pub struct Subsample<T> {
    /// Only users and items that kept an interaction, in original index order.
    pub matrix: SparseMatrix<T>,
    pub provenance: Provenance,
    /// Stage snapshots as CSR positions of the input matrix, for auditing.
    pub stages: Stages,
}

#[derive(Clone, Debug, Default)]
pub struct Stages {
    /// Input rows drawn into the sample, including top-ups.
    pub sampled_users: Vec<usize>,
    pub after_pruning: Vec<usize>,
    pub after_saturation: Vec<usize>,
}

/// Working sample over CSR positions of the source matrix.
struct Sample {
    member: Vec<bool>,
    injected: Vec<bool>,
    user_count: Vec<usize>,
    item_count: Vec<usize>,
    items_present: usize,
}

impl Sample {
    fn new<T: Scalar>(matrix: &SparseMatrix<T>) -> Self {
        Self {
            member: vec![false; matrix.nnz()],
            injected: vec![false; matrix.nnz()],
            user_count: vec![0; matrix.n_rows()],
            item_count: vec![0; matrix.n_cols()],
            items_present: 0,
        }
    }

    fn insert(&mut self, pos: usize, row: usize, col: usize) {
        debug_assert!(!self.member[pos]);
        self.member[pos] = true;
        self.user_count[row] += 1;
        if self.item_count[col] == 0 {
            self.items_present += 1;
        }
        self.item_count[col] += 1;
    }

    fn remove(&mut self, pos: usize, row: usize, col: usize) {
        debug_assert!(self.member[pos]);
        self.member[pos] = false;
        self.injected[pos] = false;
        self.user_count[row] -= 1;
        self.item_count[col] -= 1;
        if self.item_count[col] == 0 {
            self.items_present -= 1;
        }
    }

    fn positions(&self) -> Vec<usize> {
        (0..self.member.len()).filter(|&p| self.member[p]).collect()
    }

    fn total(&self) -> usize {
        self.user_count.iter().sum()
    }

    fn saturated_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.user_count.len()).filter(|&u| self.user_count[u] > 0 && self.user_count[u] >= self.items_present)
    }
}

pub fn subsample_dataset<T: Scalar>(matrix: &SparseMatrix<T>, params: &SubsampleParams) -> Result<Subsample<T>> {
    params.validate()?;
    if matrix.nnz() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = seeded(params.seed, stream::SUBSAMPLE);
    let active_users: Vec<usize> = (0..matrix.n_rows()).filter(|&r| matrix.row_len(r) > 0).collect();
    let mut order: Vec<usize> =
        active_users.iter().copied().filter(|&r| matrix.row_len(r) >= params.min_user_interactions).collect();
    let mut prov = Provenance {
        seed: params.seed,
        input_interactions: matrix.nnz(),
        input_users: active_users.len(),
        input_items: (0..matrix.n_cols()).filter(|&c| matrix.col_len(c) > 0).count(),
        users_below_min: active_users.len() - order.len(),
        mean_interactions_original: matrix.nnz() as f64 / active_users.len() as f64,
        ..Provenance::default()
    };
    if order.is_empty() {
        return Err(Error::EmptyResult(format!("no user has {} or more interactions", params.min_user_interactions)));
    }
    let filtered_total: usize = order.iter().map(|&r| matrix.row_len(r)).sum();
    let mean = filtered_total as f64 / order.len() as f64;
    prov.mean_interactions_filtered = mean;
    order.shuffle(&mut rng);

    let first_take = ((params.n_target as f64 / mean).ceil() as usize).clamp(1, order.len());
    let mut take = first_take;
    let (mut sample, after_pruning) = loop {
        let mut attempt = prov.clone();
        let (sample, after_pruning) = build_sample(matrix, &order[..take], params, &mut attempt, &mut rng);
        let total = sample.total();
        if total >= params.n_target || take == order.len() {
            prov = attempt;
            break (sample, after_pruning);
        }
        let shortfall = params.n_target - total;
        take = (take + ((shortfall as f64 / mean).ceil() as usize).max(1)).min(order.len());
    };
    prov.users_sampled = take;
    prov.users_added_for_shortfall = take - first_take;
    let stages = Stages {
        sampled_users: order[..take].to_vec(),
        after_pruning,
        after_saturation: sample.positions(),
    };

    truncate(matrix, &mut sample, params.n_target, &mut prov, &mut rng);
    if sample.total() == 0 {
        return Err(Error::EmptyResult("no interaction survived pruning".into()));
    }
    prov.items_below_min_after_truncation =
        sample.item_count.iter().filter(|&&c| c > 0 && c < params.min_item_interactions).count();
    prov.saturated_users_after_truncation = sample.saturated_users().count();

    let out = compact(matrix, &sample)?;
    prov.output_interactions = out.nnz();
    prov.output_users = out.n_rows();
    prov.output_items = out.n_cols();
    Ok(Subsample { matrix: out, provenance: prov, stages })
}

/// Independent samples with seeds `seed, seed + 1, ...`, run concurrently.
pub fn subsample_replicas<T: Scalar>(matrix: &SparseMatrix<T>, params: &SubsampleParams) -> Result<Vec<Subsample<T>>> {
    params.validate()?;
    (0..params.n_samples)
        .into_par_iter()
        .map(|i| subsample_dataset(matrix, &SubsampleParams { seed: params.seed.wrapping_add(i as u64), ..*params }))
        .collect()
}

fn build_sample<T: Scalar>(
    matrix: &SparseMatrix<T>,
    users: &[usize],
    params: &SubsampleParams,
    prov: &mut Provenance,
    rng: &mut ChaCha8Rng,
) -> (Sample, Vec<usize>) {
    let mut sample = Sample::new(matrix);
    let cols = matrix.col_indices();
    for &u in users {
        for p in matrix.row_range(u) {
            sample.insert(p, u, cols[p]);
        }
    }

    // Item support pruning to a fixpoint. Users are only dropped once empty,
    // so this settles after one effective pass; the loop makes that explicit.
    let mut passes = 0;
    loop {
        let weak: Vec<usize> = (0..matrix.n_cols())
            .filter(|&c| sample.item_count[c] > 0 && sample.item_count[c] < params.min_item_interactions)
            .collect();
        passes += 1;
        if weak.is_empty() {
            break;
        }
        prov.items_pruned += weak.len();
        for c in weak {
            for &p in matrix.col_positions(c) {
                if sample.member[p] {
                    sample.remove(p, matrix.row_of(p), c);
                    prov.interactions_pruned += 1;
                }
            }
        }
    }
    prov.pruning_passes = passes;
    prov.users_emptied_by_pruning = users.iter().filter(|&&u| sample.user_count[u] == 0).count();
    prov.interactions_after_pruning = sample.total();
    let after_pruning = sample.positions();

    // Saturation repair: a user holding every item of the sample gets an
    // interaction with an item they never rated injected, else is removed.
    loop {
        let Some(u) = sample.saturated_users().next() else { break };
        prov.saturated_users += 1;
        let unseen: Vec<usize> =
            (0..matrix.n_cols()).filter(|&c| matrix.col_len(c) > 0 && !matrix.contains(u, c)).collect();
        if unseen.is_empty() {
            for p in matrix.row_range(u) {
                if sample.member[p] {
                    sample.remove(p, u, cols[p]);
                }
            }
            prov.users_removed_saturated += 1;
            continue;
        }
        let item = unseen[rng.random_range(0..unseen.len())];
        let raters = matrix.col_positions(item);
        let in_sample: Vec<usize> = raters.iter().copied().filter(|&p| sample.user_count[matrix.row_of(p)] > 0).collect();
        let pool = if in_sample.is_empty() { raters } else { &in_sample[..] };
        let p = pool[rng.random_range(0..pool.len())];
        sample.insert(p, matrix.row_of(p), item);
        sample.injected[p] = true;
        prov.interactions_injected += 1;
    }
    prov.interactions_after_saturation = sample.total();
    (sample, after_pruning)
}

/// Randomly drops interactions down to `target`, injected ones last.
fn truncate<T: Scalar>(matrix: &SparseMatrix<T>, sample: &mut Sample, target: usize, prov: &mut Provenance, rng: &mut ChaCha8Rng) {
    let total = sample.total();
    if total <= target {
        return;
    }
    let mut excess = total - target;
    let (mut regular, mut injected): (Vec<usize>, Vec<usize>) =
        (0..matrix.nnz()).filter(|&p| sample.member[p]).partition(|&p| !sample.injected[p]);
    regular.shuffle(rng);
    injected.shuffle(rng);
    let cols = matrix.col_indices();
    for (pool, injected_pool) in [(regular, false), (injected, true)] {
        for p in pool.into_iter().take(excess) {
            sample.remove(p, matrix.row_of(p), cols[p]);
            excess -= 1;
            prov.interactions_truncated += 1;
            if injected_pool {
                prov.injected_truncated += 1;
            }
        }
    }
}

fn compact<T: Scalar>(matrix: &SparseMatrix<T>, sample: &Sample) -> Result<SparseMatrix<T>> {
    let mut row_map = vec![usize::MAX; matrix.n_rows()];
    let mut col_map = vec![usize::MAX; matrix.n_cols()];
    let mut users = TokenIndex::new();
    let mut items = TokenIndex::new();
    for r in (0..matrix.n_rows()).filter(|&r| sample.user_count[r] > 0) {
        row_map[r] = users.intern(matrix.users().token(r));
    }
    for c in (0..matrix.n_cols()).filter(|&c| sample.item_count[c] > 0) {
        col_map[c] = items.intern(matrix.items().token(c));
    }
    let entries = (0..matrix.nnz())
        .filter(|&p| sample.member[p])
        .map(|p| {
            let e = matrix.entry(p);
            Entry { row: row_map[e.row], col: col_map[e.col], ..e }
        })
        .collect();
    SparseMatrix::from_entries(Arc::new(users), Arc::new(items), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_target_input_passes_through() {
        // 12 users x 10 items, every user 6 items, every item rated by >= 2.
        let m = SparseMatrix::<f64>::from_triplets(
            12,
            10,
            (0..12).flat_map(|u| (0..6).map(move |k| (u, (u + k) % 10, 1.0 + k as f64))),
        )
        .unwrap();
        let params = SubsampleParams { n_target: 1000, ..SubsampleParams::default() };
        let s = subsample_dataset(&m, &params).unwrap();
        assert!(s.matrix.same_entries(&m));
        let p = &s.provenance;
        assert_eq!(
            (p.users_below_min, p.items_pruned, p.interactions_injected, p.users_removed_saturated, p.interactions_truncated),
            (0, 0, 0, 0, 0)
        );
    }

    #[test]
    fn saturated_user_without_unseen_items_is_removed() {
        // User 0 rated all 6 items; others rated 5 of them.
        let mut triplets: Vec<(usize, usize, f64)> = (0..6).map(|c| (0, c, 5.0)).collect();
        for u in 1..10 {
            triplets.extend((0..5).map(|k| (u, (u + k) % 6, 3.0)));
        }
        let m = SparseMatrix::<f64>::from_triplets(10, 6, triplets).unwrap();
        let params = SubsampleParams { n_target: 10_000, ..SubsampleParams::default() };
        let s = subsample_dataset(&m, &params).unwrap();
        assert_eq!(s.provenance.users_removed_saturated, 1);
        assert!(s.matrix.users().get("0").is_none());
        assert_eq!(s.provenance.saturated_users_after_truncation, 0);
    }

    #[test]
    fn truncates_to_target() {
        let m = SparseMatrix::<f64>::from_triplets(50, 40, (0..50).flat_map(|u| (0..12).map(move |k| (u, (u * 3 + k) % 40, 1.0)))).unwrap();
        let params = SubsampleParams { n_target: 300, ..SubsampleParams::default() };
        let s = subsample_dataset(&m, &params).unwrap();
        assert_eq!(s.matrix.nnz(), 300);
        let again = subsample_dataset(&m, &params).unwrap();
        assert!(again.matrix.same_entries(&s.matrix));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let m = SparseMatrix::<f64>::from_triplets(1, 1, vec![(0, 0, 1.0)]).unwrap();
        let params = SubsampleParams { n_target: 0, ..SubsampleParams::default() };
        assert!(matches!(subsample_dataset(&m, &params), Err(Error::InvalidArgument(_))));
        let params = SubsampleParams::default();
        assert!(matches!(subsample_dataset(&m, &params), Err(Error::EmptyResult(_))));
    }
}
