//! Interaction logs: delimited-text ingestion, deduplication into a
//! [`SparseMatrix`], and export back to the same schema.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Entry, SparseMatrix, TokenIndex};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Parsed records in input order; duplicates are kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionSet {
    pub records: Vec<InteractionRecord>,
}

impl InteractionSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.records.iter().map(|r| r.user.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn n_items(&self) -> usize {
        self.records.iter().map(|r| r.item.as_str()).collect::<HashSet<_>>().len()
    }
}

/// Column mapping and dialect of a delimited interaction file.
///
/// The timestamp column is optional per file: when the mapped index is past
/// the end of the rows (e.g. a three-column file) or the field is empty, the
/// record has no timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub has_header: bool,
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
    pub timestamp_col: Option<usize>,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self { delimiter: b',', has_header: false, user_col: 0, item_col: 1, rating_col: 2, timestamp_col: Some(3) }
    }
}

pub fn load_interactions<R: Read>(source: R, format: &CsvFormat) -> Result<InteractionSet> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(source);

    let required = format.user_col.max(format.item_col).max(format.rating_col) + 1;
    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(err) => return Err(parse_error(err)),
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() < required {
            return Err(Error::Parse { line, message: format!("expected at least {required} fields, found {}", row.len()) });
        }
        let user = &row[format.user_col];
        let item = &row[format.item_col];
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse { line, message: "empty user or item token".into() });
        }
        let rating: f64 = row[format.rating_col]
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("unparsable rating {:?}", &row[format.rating_col]) })?;
        if !rating.is_finite() {
            return Err(Error::Parse { line, message: format!("rating {rating} is not finite") });
        }
        let timestamp = match format.timestamp_col.and_then(|c| row.get(c)) {
            None | Some("") => None,
            Some(raw) => Some(
                raw.parse::<i64>()
                    .map_err(|_| Error::Parse { line, message: format!("unparsable timestamp {raw:?}") })?,
            ),
        };
        records.push(InteractionRecord { user: user.to_owned(), item: item.to_owned(), rating, timestamp });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(InteractionSet { records })
}

fn parse_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            Error::Parse { line, message: format!("expected {expected_len} fields, found {len}") }
        }
        csv::ErrorKind::Utf8 { .. } => Error::Parse { line, message: "row is not valid UTF-8".into() },
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

/// How repeated (user, item) pairs collapse into one matrix entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Keep the record with the latest timestamp; later input wins ties.
    #[default]
    KeepLastByTimestamp,
    /// Average the ratings; keep the latest timestamp.
    Mean,
}

pub fn build_matrix<T: Scalar>(records: &InteractionSet, dedup: DedupPolicy) -> Result<SparseMatrix<T>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    struct Slot {
        row: usize,
        col: usize,
        sum: f64,
        count: usize,
        rating: f64,
        timestamp: Option<i64>,
    }
    let mut users = TokenIndex::new();
    let mut items = TokenIndex::new();
    let mut slots: Vec<Slot> = Vec::with_capacity(records.len());
    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(records.len());

    for rec in &records.records {
        let row = users.intern(&rec.user);
        let col = items.intern(&rec.item);
        match seen.get(&(row, col)) {
            None => {
                seen.insert((row, col), slots.len());
                slots.push(Slot { row, col, sum: rec.rating, count: 1, rating: rec.rating, timestamp: rec.timestamp });
            }
            Some(&i) => {
                let slot = &mut slots[i];
                slot.sum += rec.rating;
                slot.count += 1;
                let newer = rec.timestamp.unwrap_or(i64::MIN) >= slot.timestamp.unwrap_or(i64::MIN);
                if newer {
                    slot.rating = rec.rating;
                }
                slot.timestamp = match (slot.timestamp, rec.timestamp) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
        }
    }

    let entries = slots
        .into_iter()
        .map(|s| {
            let value = match dedup {
                DedupPolicy::KeepLastByTimestamp => s.rating,
                DedupPolicy::Mean => s.sum / s.count as f64,
            };
            Entry { row: s.row, col: s.col, value: T::lit(value), timestamp: s.timestamp }
        })
        .collect();
    SparseMatrix::from_entries(Arc::new(users), Arc::new(items), entries)
}

/// Writes entries as `user,item,rating,timestamp` rows (timestamp empty when
/// missing). `positions` selects CSR positions; `None` writes every entry.
pub fn write_interactions<T: Scalar, W: Write>(
    matrix: &SparseMatrix<T>,
    positions: Option<&[usize]>,
    delimiter: u8,
    header: bool,
    out: W,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    if header {
        writer.write_record(["user", "item", "rating", "timestamp"])?;
    }
    let mut write_one = |pos: usize| -> Result<()> {
        let e = matrix.entry(pos);
        let ts = e.timestamp.map(|t| t.to_string()).unwrap_or_default();
        writer.write_record([
            matrix.users().token(e.row),
            matrix.items().token(e.col),
            &e.value.as_f64().to_string(),
            &ts,
        ])?;
        Ok(())
    };
    match positions {
        Some(ps) => ps.iter().try_for_each(|&p| write_one(p))?,
        None => (0..matrix.nnz()).try_for_each(&mut write_one)?,
    }
    writer.flush()?;
    Ok(())
}
