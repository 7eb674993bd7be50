//! Training-subset selection from per-rating scores, relative performance
//! and correlation helpers.

use std::cmp::Ordering;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{SparseMatrix, MISSING_TIMESTAMP};
use crate::perturb::floor_count;
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;
use crate::scoring::ScoreTable;
use crate::split::{EntryKind, EntrySet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Lowest perturbation error first.
    ScLow,
    /// Highest perturbation error first.
    ScHigh,
    Random,
    /// Most recent first.
    Temporal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::ScLow, Strategy::ScHigh, Strategy::Random, Strategy::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ScLow => "sc_low",
            Strategy::ScHigh => "sc_high",
            Strategy::Random => "random",
            Strategy::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?} (expected sc_low, sc_high, random or temporal)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub rate: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SelectionSpec {
    pub fn new(strategy: Strategy, rate: f64, seed: u64) -> Self {
        Self { strategy, rate, seed, stratified: true }
    }
}

/// Picks `floor(rate * |train|)` entries.
///
/// In stratified mode every user keeps at least one entry. Within a user,
/// the strategy orders entries; the j-th entry (0-based) of a user with `c`
/// entries has priority `j / c`, and the subset is the lowest-priority
/// prefix of the global order. Each user therefore gets at most
/// `max(1, ceil(rate * c))` entries, overshoot is trimmed from the users
/// furthest above their proportional share, and the subset at a lower rate
/// is always contained in the subset at a higher one.
pub fn select_subset<T: Scalar>(matrix: &SparseMatrix<T>, scores: &ScoreTable, spec: &SelectionSpec) -> Result<EntrySet> {
    if !(spec.rate > 0.0 && spec.rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("rate must lie in (0, 1], got {}", spec.rate)));
    }
    if spec.strategy == Strategy::Temporal && !matrix.has_timestamps() {
        return Err(Error::Unsupported("temporal selection needs a timestamp on every interaction".into()));
    }
    let nnz = matrix.nnz();
    if nnz == 0 {
        return Err(Error::EmptyInput);
    }
    let score = scores.aligned_to(matrix)?;
    let stamp = |p: usize| matrix.timestamp(p).unwrap_or(MISSING_TIMESTAMP);
    let col = |p: usize| matrix.col_indices()[p];
    let by_strategy = |a: &usize, b: &usize| -> Ordering {
        let (a, b) = (*a, *b);
        match spec.strategy {
            Strategy::ScLow => score[a].total_cmp(&score[b]).then(stamp(a).cmp(&stamp(b))).then(col(a).cmp(&col(b))),
            Strategy::ScHigh => score[b].total_cmp(&score[a]).then(stamp(a).cmp(&stamp(b))).then(col(a).cmp(&col(b))),
            Strategy::Temporal => stamp(b).cmp(&stamp(a)).then(col(b).cmp(&col(a))),
            Strategy::Random => Ordering::Equal,
        }
    };
    let budget = if spec.rate == 1.0 { nnz } else { floor_count(spec.rate * nnz as f64) };
    let mut rng = seeded(spec.seed, stream::SELECTION);

    let chosen: Vec<usize> = if spec.stratified {
        let n_users = (0..matrix.n_rows()).filter(|&r| matrix.row_len(r) > 0).count();
        if budget < n_users {
            return Err(Error::InfeasibleRate(format!(
                "rate {} keeps {budget} of {nnz} entries, fewer than the {n_users} users",
                spec.rate
            )));
        }
        // (rank within user, user size, row, position)
        let mut ranked: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(nnz);
        for row in 0..matrix.n_rows() {
            let mut own: Vec<usize> = matrix.row_range(row).collect();
            if spec.strategy == Strategy::Random {
                own.shuffle(&mut rng);
            } else {
                own.sort_by(by_strategy);
            }
            let c = own.len();
            ranked.extend(own.into_iter().enumerate().map(|(j, p)| (j, c, row, p)));
        }
        ranked.sort_by(|a, b| {
            let lhs = a.0 as u128 * b.1 as u128;
            let rhs = b.0 as u128 * a.1 as u128;
            lhs.cmp(&rhs).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0))
        });
        ranked.into_iter().take(budget).map(|r| r.3).collect()
    } else {
        let mut all: Vec<usize> = (0..nnz).collect();
        if spec.strategy == Strategy::Random {
            all.shuffle(&mut rng);
        } else {
            all.sort_by(|a, b| by_strategy(a, b).then(a.cmp(b)));
        }
        all.truncate(budget.max(1));
        all
    };
    let mut chosen = chosen;
    chosen.sort_unstable();
    Ok(EntrySet::new(EntryKind::Selection, chosen.into_iter().map(|p| matrix.cell(p)).collect()))
}

/// Relative performance change in percent against the full-data baseline.
pub fn rpa(metric_at_rate: f64, metric_at_full: f64) -> Result<f64> {
    if !(metric_at_full > 0.0 && metric_at_full.is_finite()) {
        return Err(Error::UndefinedBaseline(metric_at_full));
    }
    Ok(100.0 * (metric_at_rate / metric_at_full - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson_r: f64,
    pub n: usize,
}

/// Pearson product-moment correlation, two-pass.
pub fn correlate(pairs: &[(f64, f64)]) -> Result<Correlation> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 3 pairs, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NumericInput("correlation input contains a non-finite value".into()));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| crate::scalar::compensated_sum(pairs.iter().map(f)) / n as f64;
    let (mx, my) = (mean(|p| p.0), mean(|p| p.1));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("a coordinate has zero variance".into()));
    }
    Ok(Correlation { pearson_r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), n })
}

/// Reads `(x, y)` pairs from a CSV with a header row. Columns are chosen by
/// header name; without names the first two columns are used.
pub fn load_pairs<R: Read>(source: R, x_column: Option<&str>, y_column: Option<&str>) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: Option<&str>, default: usize| -> Result<usize> {
        match name {
            None if default < headers.len() => Ok(default),
            None => Err(Error::InvalidArgument(format!("input has only {} columns", headers.len()))),
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}"))),
        }
    };
    let (xi, yi) = (find(x_column, 0)?, find(y_column, 1)?);
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse().map_err(|_| Error::Parse { line, message: format!("unparsable number {raw:?}") })
        };
        pairs.push((parse(xi)?, parse(yi)?));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::matrix::{Entry, TokenIndex};
    use crate::perturb::PerturbationParams;
    use crate::scoring::score_ratings;
    use crate::svd::SvdQuality;

    fn scored(n: usize, m: usize) -> (SparseMatrix<f64>, ScoreTable) {
        let entries = (0..n)
            .flat_map(|i| {
                (0..m).filter(move |j| (i + 2 * j) % 3 != 1).map(move |j| Entry {
                    row: i,
                    col: j,
                    value: 1.0 + ((i * j) % 5) as f64,
                    timestamp: Some(((i * 31 + j * 17) % 97) as i64),
                })
            })
            .collect();
        let matrix =
            SparseMatrix::from_entries(Arc::new(TokenIndex::numeric(n)), Arc::new(TokenIndex::numeric(m)), entries).unwrap();
        let table = score_ratings(&matrix, 4, &PerturbationParams::new(0.1, 0.7, 1), 2, &SvdQuality::default()).unwrap();
        (matrix, table)
    }

    #[test]
    fn full_rate_is_identity() {
        let (m, t) = scored(10, 8);
        for strategy in Strategy::ALL {
            let s = select_subset(&m, &t, &SelectionSpec::new(strategy, 1.0, 0)).unwrap();
            assert_eq!(s.positions, m.cells().collect::<Vec<_>>());
        }
    }

    #[test]
    fn sc_low_picks_smallest_scores() {
        let m = SparseMatrix::<f64>::from_triplets(1, 3, vec![(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        let mut t = score_ratings(
            &SparseMatrix::from_triplets(3, 3, (0..9).filter(|i| i % 4 != 3).map(|i| (i / 3, i % 3, 1.0 + i as f64))).unwrap(),
            2,
            &PerturbationParams::new(0.1, 1.0, 0),
            1,
            &SvdQuality::default(),
        )
        .unwrap();
        // Overwrite with hand scores for row 0.
        for (e, s) in t.entries.iter().zip(t.scores.iter_mut()) {
            if e.row == 0 {
                *s = [0.1, 0.9, 0.5][e.col];
            }
        }
        let s = select_subset(&m, &t, &SelectionSpec::new(Strategy::ScLow, 2.0 / 3.0, 0)).unwrap();
        let cols: Vec<usize> = s.iter().map(|c| c.col).collect();
        assert_eq!(cols, vec![0, 2]);
    }

    #[test]
    fn infeasible_rate() {
        let (m, t) = scored(10, 8);
        let err = select_subset(&m, &t, &SelectionSpec::new(Strategy::Random, 0.05, 0)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleRate(_)));
    }

    #[test]
    fn unknown_strategy_token() {
        assert!("sc_mid".parse::<Strategy>().is_err());
        assert_eq!("temporal".parse::<Strategy>().unwrap(), Strategy::Temporal);
    }

    #[test]
    fn rpa_cases() {
        assert_eq!(rpa(0.2, 0.1).unwrap(), 100.0);
        assert_eq!(rpa(0.37, 0.37).unwrap(), 0.0);
        assert!(matches!(rpa(0.1, 0.0), Err(Error::UndefinedBaseline(_))));
    }

    #[test]
    fn correlation_cases() {
        let line: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 10.0 - 2.0 * i as f64)).collect();
        assert!((correlate(&line).unwrap().pearson_r + 1.0).abs() < 1e-15);
        assert!(matches!(correlate(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]), Err(Error::DegenerateInput(_))));
        assert!(correlate(&[(1.0, 2.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn pairs_by_column_name() {
        let text = "name,a,b\nx,1,2\ny,2,4.5\n";
        assert_eq!(load_pairs(text.as_bytes(), Some("b"), Some("a")).unwrap(), vec![(2.0, 1.0), (4.5, 2.0)]);
        assert!(load_pairs(text.as_bytes(), Some("c"), None).is_err());
    }
}
