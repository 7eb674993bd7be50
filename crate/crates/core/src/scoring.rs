//! Per-rating perturbation errors: each fold of the observed set is
//! perturbed in turn and every member is scored by how far the corrected
//! reconstruction lands from its true rating.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::matrix::{Cell, Entry, SparseMatrix, TokenIndex};
use crate::metrics::{evaluate_plan, rmse_on};
use crate::perturb::{fold_perturbation_plan, PerturbationParams};
use crate::scalar::Scalar;
use crate::split::partition_entries;
use crate::svd::SvdQuality;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub params: PerturbationParams,
    pub n_folds: usize,
    pub k: usize,
    pub quality: SvdQuality,
}

/// Scores for every observed entry, in CSR order of the scored matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    users: Arc<TokenIndex>,
    items: Arc<TokenIndex>,
    pub entries: Vec<Entry<f64>>,
    /// Absolute residual `|M_ij - M~_ij|` per entry.
    pub scores: Vec<f64>,
    pub fold_of: Vec<usize>,
    /// Fold-level RMSE over each fold's own entries; empty when loaded from CSV.
    pub fold_rmse: Vec<f64>,
    /// Clamped square roots per fold; empty when loaded from CSV.
    pub fold_clamped: Vec<usize>,
    /// `None` when the table was read back from CSV.
    pub config: Option<ScoreConfig>,
}

pub fn score_ratings<T: Scalar>(
    matrix: &SparseMatrix<T>,
    n_folds: usize,
    params: &PerturbationParams,
    k: usize,
    quality: &SvdQuality,
) -> Result<ScoreTable> {
    params.validate()?;
    let folds = partition_entries(matrix, n_folds, params.seed)?;
    let per_fold = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let plan = fold_perturbation_plan(matrix, fold, f, params)?;
            let eval = evaluate_plan(matrix, &plan, k, quality)?;
            let predictions = eval.predict(fold)?;
            let rmse = rmse_on(matrix, &predictions, fold)?.as_f64();
            let scored: Vec<(Cell, f64)> = fold
                .iter()
                .zip(&predictions)
                .map(|(c, &pred)| (c, (matrix.get(c.row, c.col) - pred).abs().as_f64()))
                .collect();
            Ok((scored, rmse, eval.correction.clamped_count))
        })
        .collect::<Result<Vec<_>>>()?;

    let nnz = matrix.nnz();
    let mut scores = vec![f64::NAN; nnz];
    let mut fold_of = vec![usize::MAX; nnz];
    let mut fold_rmse = Vec::with_capacity(n_folds);
    let mut fold_clamped = Vec::with_capacity(n_folds);
    for (f, (scored, rmse, clamped)) in per_fold.into_iter().enumerate() {
        for (c, s) in scored {
            let p = matrix.position(c.row, c.col).expect("fold cells are observed");
            scores[p] = s;
            fold_of[p] = f;
        }
        fold_rmse.push(rmse);
        fold_clamped.push(clamped);
    }
    if let Some(p) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NumericInput(format!("score at {:?} is not finite", matrix.cell(p))));
    }
    Ok(ScoreTable {
        users: Arc::clone(matrix.users()),
        items: Arc::clone(matrix.items()),
        entries: matrix
            .entries()
            .map(|e| Entry { row: e.row, col: e.col, value: e.value.as_f64(), timestamp: e.timestamp })
            .collect(),
        scores,
        fold_of,
        fold_rmse,
        fold_clamped,
        config: Some(ScoreConfig { params: *params, n_folds, k, quality: *quality }),
    })
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn users(&self) -> &Arc<TokenIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<TokenIndex> {
        &self.items
    }

    pub fn get(&self, cell: Cell) -> Option<f64> {
        self.entries.binary_search_by_key(&cell, Entry::cell).ok().map(|i| self.scores[i])
    }

    pub fn get_by_token(&self, user: &str, item: &str) -> Option<f64> {
        self.get(Cell::new(self.users.get(user)?, self.items.get(item)?))
    }

    /// Scores for every entry of `matrix` in its CSR order, matched by token.
    pub fn aligned_to<T: Scalar>(&self, matrix: &SparseMatrix<T>) -> Result<Vec<f64>> {
        let same_maps = Arc::ptr_eq(&self.users, matrix.users()) && Arc::ptr_eq(&self.items, matrix.items());
        matrix
            .entries()
            .map(|e| {
                let score = if same_maps {
                    self.get(e.cell())
                } else {
                    self.get_by_token(matrix.users().token(e.row), matrix.items().token(e.col))
                };
                score.ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "no score for ({}, {})",
                        matrix.users().token(e.row),
                        matrix.items().token(e.col)
                    ))
                })
            })
            .collect()
    }

    /// The scored matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Result<SparseMatrix<T>> {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry { row: e.row, col: e.col, value: T::lit(e.value), timestamp: e.timestamp })
            .collect();
        SparseMatrix::from_entries(Arc::clone(&self.users), Arc::clone(&self.items), entries)
    }

    /// Columns: user_token, item_token, rating, timestamp, fold, score.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["user_token", "item_token", "rating", "timestamp", "fold", "score"])?;
        for ((e, &fold), &score) in self.entries.iter().zip(&self.fold_of).zip(&self.scores) {
            writer.write_record([
                self.users.token(e.row),
                self.items.token(e.col),
                &e.value.to_string(),
                &e.timestamp.map(|t| t.to_string()).unwrap_or_default(),
                &fold.to_string(),
                &score.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
        let mut users = TokenIndex::new();
        let mut items = TokenIndex::new();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| record.get(i).ok_or_else(|| Error::Parse { line, message: format!("missing column {i}") });
            let parse_f64 = |i: usize| -> Result<f64> {
                let raw = field(i)?;
                raw.parse().map_err(|_| Error::Parse { line, message: format!("unparsable number {raw:?}") })
            };
            let timestamp = match field(3)? {
                "" => None,
                raw => Some(raw.parse().map_err(|_| Error::Parse { line, message: format!("unparsable timestamp {raw:?}") })?),
            };
            let fold: usize =
                field(4)?.parse().map_err(|_| Error::Parse { line, message: "unparsable fold index".into() })?;
            let score = parse_f64(5)?;
            let entry = Entry { row: users.intern(field(0)?), col: items.intern(field(1)?), value: parse_f64(2)?, timestamp };
            rows.push((entry, fold, score));
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        rows.sort_by_key(|(e, _, _)| e.cell());
        if let Some(w) = rows.windows(2).find(|w| w[0].0.cell() == w[1].0.cell()) {
            return Err(Error::InvalidArgument(format!("duplicate scored entry {:?}", w[0].0.cell())));
        }
        Ok(Self {
            users: Arc::new(users),
            items: Arc::new(items),
            entries: rows.iter().map(|r| r.0).collect(),
            fold_of: rows.iter().map(|r| r.1).collect(),
            scores: rows.iter().map(|r| r.2).collect(),
            fold_rmse: Vec::new(),
            fold_clamped: Vec::new(),
            config: None,
        })
    }

    /// Binary cache, `SCS1`: magic, u32 version, u64 config flag, the
    /// config as length-prefixed JSON when present, the scored matrix as an
    /// embedded `SCM1` block, then scores (f64), fold indices (u64), and the
    /// per-fold RMSE (u64 count, f64 each) and clamp counts (u64 each).
    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCS1", 1)?;
        match &self.config {
            Some(config) => {
                binio::write_u64(w, 1)?;
                binio::write_str(w, &serde_json::to_string(config)?)?;
            }
            None => binio::write_u64(w, 0)?,
        }
        self.to_matrix::<f64>()?.write_cache(w)?;
        for &s in &self.scores {
            binio::write_f64(w, s)?;
        }
        for &f in &self.fold_of {
            binio::write_u64(w, f as u64)?;
        }
        binio::write_u64(w, self.fold_rmse.len() as u64)?;
        for (&r, &c) in self.fold_rmse.iter().zip(&self.fold_clamped) {
            binio::write_f64(w, r)?;
            binio::write_u64(w, c as u64)?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"SCS1", 1)?;
        let config = match binio::read_u64(r)? {
            0 => None,
            _ => Some(serde_json::from_str(&binio::read_str(r)?)?),
        };
        let matrix = SparseMatrix::<f64>::read_cache(r)?;
        let nnz = matrix.nnz();
        let scores = (0..nnz).map(|_| binio::read_f64(r)).collect::<Result<Vec<_>>>()?;
        let fold_of = (0..nnz).map(|_| binio::read_usize(r)).collect::<Result<Vec<_>>>()?;
        let n_folds = binio::read_usize(r)?;
        let mut fold_rmse = Vec::with_capacity(n_folds);
        let mut fold_clamped = Vec::with_capacity(n_folds);
        for _ in 0..n_folds {
            fold_rmse.push(binio::read_f64(r)?);
            fold_clamped.push(binio::read_usize(r)?);
        }
        Ok(Self {
            users: Arc::clone(matrix.users()),
            items: Arc::clone(matrix.items()),
            entries: matrix.entries().collect(),
            scores,
            fold_of,
            fold_rmse,
            fold_clamped,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, m: usize) -> SparseMatrix<f64> {
        SparseMatrix::from_triplets(
            n,
            m,
            (0..n).flat_map(|i| (0..m).filter(move |j| (i * 7 + j * 3) % 4 != 0).map(move |j| (i, j, 1.0 + ((i + 2 * j) % 5) as f64))),
        )
        .unwrap()
    }

    #[test]
    fn every_entry_scored_once() {
        let m = grid(30, 20);
        let t = score_ratings(&m, 10, &PerturbationParams::new(0.1, 0.7, 1), 3, &SvdQuality::default()).unwrap();
        assert_eq!(t.len(), m.nnz());
        assert!(t.scores.iter().all(|s| s.is_finite() && *s >= 0.0));
        let mut per_fold = [0usize; 10];
        for &f in &t.fold_of {
            per_fold[f] += 1;
        }
        assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
    }

    #[test]
    fn fold_rmse_aggregates_scores() {
        let m = grid(20, 15);
        let t = score_ratings(&m, 5, &PerturbationParams::new(0.1, 0.7, 2), 2, &SvdQuality::default()).unwrap();
        for f in 0..5 {
            let sq: Vec<f64> = t.fold_of.iter().zip(&t.scores).filter(|(&g, _)| g == f).map(|(_, s)| s * s).collect();
            let rmse = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
            assert!((rmse - t.fold_rmse[f]).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_cache_round_trip() {
        let m = grid(12, 9);
        let t = score_ratings(&m, 4, &PerturbationParams::new(0.1, 0.7, 3), 2, &SvdQuality::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ScoreTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.aligned_to(&m).unwrap(), t.scores);

        let mut bin = Vec::new();
        t.write_cache(&mut bin).unwrap();
        let back = ScoreTable::read_cache(&mut bin.as_slice()).unwrap();
        assert_eq!(back.scores, t.scores);
        assert_eq!(back.fold_of, t.fold_of);
        assert_eq!(back.config, t.config);
    }
}
