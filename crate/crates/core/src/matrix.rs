//! Sparse technique-by-device benchmark storage.
//!
//! Rows are ML techniques, columns are hardware devices. A cell holds one
//! measured performance value (e.g. inference milliseconds); absent cells are
//! benchmarks that have never been run. The observed set is exactly the key
//! set of the entry map — missing values are represented by absence, never by
//! a stored zero, so a legitimate 0.0 measurement stays unambiguous.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("index ({row}, {col}) out of range for {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("column {col} out of range for {cols} columns")]
    ColumnOutOfRange { col: usize, cols: usize },
    #[error("value at ({row}, {col}) must be finite and non-negative, got {value}")]
    InvalidValue { row: usize, col: usize, value: f64 },
    #[error("matrix has no observed entries")]
    EmptyObservedSet,
    #[error("column {col} has no observed entries")]
    EmptyColumn { col: usize },
    #[error("missing fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("csv row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("duplicate {kind} label `{label}`")]
    DuplicateLabel { kind: &'static str, label: String },
    #[error("csv row {row}, column {col}: cannot parse `{cell}` as a number")]
    BadCell { row: usize, col: usize, cell: String },
    #[error("csv header must start with `technique`, got `{0}`")]
    BadHeader(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Serialized shape of [`BenchmarkMatrix`]: entries flattened to
/// `[row, col, value]` triples so the map survives JSON (which cannot key
/// objects by tuples).
#[derive(Serialize, Deserialize)]
pub struct MatrixRepr {
    rows: usize,
    cols: usize,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    entries: Vec<(usize, usize, f64)>,
}

/// Sparse m-by-n matrix of observed benchmark values with row/column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct BenchmarkMatrix {
    rows: usize,
    cols: usize,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    entries: BTreeMap<(usize, usize), f64>,
}

impl From<BenchmarkMatrix> for MatrixRepr {
    fn from(m: BenchmarkMatrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            row_labels: m.row_labels,
            col_labels: m.col_labels,
            entries: m.entries.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
        }
    }
}

impl TryFrom<MatrixRepr> for BenchmarkMatrix {
    type Error = MatrixError;

    fn try_from(r: MatrixRepr) -> Result<Self, MatrixError> {
        if r.row_labels.len() != r.rows || r.col_labels.len() != r.cols {
            return Err(MatrixError::BadHeader(format!(
                "label counts {}x{} do not match declared shape {}x{}",
                r.row_labels.len(),
                r.col_labels.len(),
                r.rows,
                r.cols
            )));
        }
        let mut m = BenchmarkMatrix::new(r.row_labels, r.col_labels)?;
        for (i, j, v) in r.entries {
            m.insert(i, j, v)?;
        }
        Ok(m)
    }
}

impl BenchmarkMatrix {
    /// Creates an empty matrix whose shape is given by the label lists.
    /// Labels must be unique per axis.
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self, MatrixError> {
        check_unique("technique", &row_labels)?;
        check_unique("device", &col_labels)?;
        Ok(BenchmarkMatrix {
            rows: row_labels.len(),
            cols: col_labels.len(),
            row_labels,
            col_labels,
            entries: BTreeMap::new(),
        })
    }

    /// Convenience constructor with generated `technique_*` / `device_*` labels.
    pub fn with_shape(rows: usize, cols: usize) -> Self {
        let width = |n: usize| n.saturating_sub(1).to_string().len().max(1);
        let (rw, cw) = (width(rows), width(cols));
        let row_labels = (0..rows).map(|i| format!("technique_{i:0rw$}")).collect();
        let col_labels = (0..cols).map(|j| format!("device_{j:0cw$}")).collect();
        BenchmarkMatrix::new(row_labels, col_labels).expect("generated labels are unique")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    pub fn col_index(&self, label: &str) -> Option<usize> {
        self.col_labels.iter().position(|l| l == label)
    }

    /// Number of observed entries (the size of the observed set).
    pub fn observed_len(&self) -> usize {
        self.entries.len()
    }

    /// Observed entries in ascending `(row, col)` order.
    pub fn observed(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries.get(&(row, col)).copied()
    }

    /// Stores a measurement. Overwriting an existing cell is allowed; the
    /// latest value wins.
    pub fn insert(&mut self, row: usize, col: usize, value: f64) -> Result<(), MatrixError> {
        if row >= self.rows || col >= self.cols {
            return Err(MatrixError::IndexOutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        if !value.is_finite() || value < 0.0 {
            return Err(MatrixError::InvalidValue { row, col, value });
        }
        self.entries.insert((row, col), value);
        Ok(())
    }

    /// Removes an observation, returning the previous value if present.
    pub fn remove(&mut self, row: usize, col: usize) -> Option<f64> {
        self.entries.remove(&(row, col))
    }

    /// Appends an empty row for a new technique.
    pub fn add_row(&mut self, label: &str) -> Result<usize, MatrixError> {
        if self.row_index(label).is_some() {
            return Err(MatrixError::DuplicateLabel {
                kind: "technique",
                label: label.to_string(),
            });
        }
        self.row_labels.push(label.to_string());
        self.rows += 1;
        Ok(self.rows - 1)
    }

    /// Appends an empty column for a new device.
    pub fn add_col(&mut self, label: &str) -> Result<usize, MatrixError> {
        if self.col_index(label).is_some() {
            return Err(MatrixError::DuplicateLabel {
                kind: "device",
                label: label.to_string(),
            });
        }
        self.col_labels.push(label.to_string());
        self.cols += 1;
        Ok(self.cols - 1)
    }

    /// Observed `(row, value)` pairs of one column, ascending by row.
    pub fn observed_in_col(&self, col: usize) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter(|((_, j), _)| *j == col)
            .map(|(&(i, _), &v)| (i, v))
            .collect()
    }

    /// Observed `(col, value)` pairs of one row, ascending by column.
    pub fn observed_in_row(&self, row: usize) -> Vec<(usize, f64)> {
        self.entries
            .range((row, 0)..=(row, self.cols.saturating_sub(1)))
            .map(|(&(_, j), &v)| (j, v))
            .collect()
    }

    /// Fits a min-max scaler over the observed entries.
    pub fn fit_normalizer(&self) -> Result<Normalizer, MatrixError> {
        Normalizer::fit(self)
    }

    /// Returns a copy with every observed value mapped through `normalizer`.
    pub fn normalized(&self, normalizer: &Normalizer) -> BenchmarkMatrix {
        let mut out = self.clone();
        for v in out.entries.values_mut() {
            *v = normalizer.normalize(*v);
        }
        out
    }

    /// Removes `round(missing_fraction * observed-in-column)` entries from
    /// `target_col`, chosen uniformly without replacement by a seeded RNG.
    /// Returns the masked matrix and the held-out `(row, true value)` pairs,
    /// ascending by row. Deterministic for a fixed seed.
    pub fn apply_mask(
        &self,
        target_col: usize,
        missing_fraction: f64,
        seed: u64,
    ) -> Result<(BenchmarkMatrix, Vec<(usize, f64)>), MatrixError> {
        if !missing_fraction.is_finite() || !(0.0..=1.0).contains(&missing_fraction) {
            return Err(MatrixError::InvalidFraction(missing_fraction));
        }
        if target_col >= self.cols {
            return Err(MatrixError::ColumnOutOfRange {
                col: target_col,
                cols: self.cols,
            });
        }
        let observed = self.observed_in_col(target_col);
        if observed.is_empty() {
            return Err(MatrixError::EmptyColumn { col: target_col });
        }
        let count = (missing_fraction * observed.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held: Vec<(usize, f64)> = rand::seq::index::sample(&mut rng, observed.len(), count)
            .iter()
            .map(|k| observed[k])
            .collect();
        held.sort_unstable_by_key(|&(row, _)| row);
        let mut masked = self.clone();
        for &(row, _) in &held {
            masked.entries.remove(&(row, target_col));
        }
        Ok((masked, held))
    }

    /// Parses the benchmark CSV format: header `technique,<device-id>,...`,
    /// one row per technique, empty cells meaning "not benchmarked".
    /// Row/column coordinates in errors are 1-based (header is row 1).
    pub fn ingest_csv(text: &str) -> Result<BenchmarkMatrix, MatrixError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(rec) => rec?,
            None => return Err(MatrixError::BadHeader("<empty input>".to_string())),
        };
        let first = header.get(0).unwrap_or("");
        if !first.eq_ignore_ascii_case("technique") {
            return Err(MatrixError::BadHeader(first.to_string()));
        }
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let expected = header.len();

        let mut row_labels: Vec<String> = Vec::new();
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (idx, rec) in records.enumerate() {
            let rec = rec?;
            let row_no = idx + 2;
            if rec.len() != expected {
                return Err(MatrixError::RaggedRow {
                    row: row_no,
                    expected,
                    got: rec.len(),
                });
            }
            row_labels.push(rec[0].to_string());
            for (field, cell) in rec.iter().enumerate().skip(1) {
                let cell = cell.trim();
                if cell.is_empty() {
                    continue;
                }
                let value: f64 = cell.parse().map_err(|_| MatrixError::BadCell {
                    row: row_no,
                    col: field + 1,
                    cell: cell.to_string(),
                })?;
                cells.push((idx, field - 1, value));
            }
        }

        let mut matrix = BenchmarkMatrix::new(row_labels, col_labels)?;
        for (i, j, v) in cells {
            matrix.insert(i, j, v)?;
        }
        Ok(matrix)
    }

    /// Emits the matrix in the same CSV format `ingest_csv` accepts.
    /// Values are printed with shortest round-trip formatting, so
    /// `ingest_csv(to_csv(m)) == m` exactly.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = Vec::with_capacity(self.cols + 1);
        header.push("technique".to_string());
        header.extend(self.col_labels.iter().cloned());
        writer.write_record(&header).expect("write to Vec");
        for i in 0..self.rows {
            let mut record = Vec::with_capacity(self.cols + 1);
            record.push(self.row_labels[i].clone());
            for j in 0..self.cols {
                record.push(match self.get(i, j) {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            writer.write_record(&record).expect("write to Vec");
        }
        String::from_utf8(writer.into_inner().expect("flush to Vec")).expect("csv output is utf-8")
    }
}

fn check_unique(kind: &'static str, labels: &[String]) -> Result<(), MatrixError> {
    let mut seen = BTreeSet::new();
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(MatrixError::DuplicateLabel {
                kind,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

/// Affine min-max scaler fitted on the observed entries of a matrix.
///
/// Maps `min_observed` to 0 and `max_observed` to 1. When every observed
/// value is equal the range is widened by 1.0 so the mapping stays defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    min_observed: f64,
    max_observed: f64,
}

impl Normalizer {
    pub fn fit(matrix: &BenchmarkMatrix) -> Result<Normalizer, MatrixError> {
        let mut values = matrix.observed().map(|(_, v)| v);
        let first = values.next().ok_or(MatrixError::EmptyObservedSet)?;
        let (mut lo, mut hi) = (first, first);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            hi = lo + 1.0;
        }
        Ok(Normalizer {
            min_observed: lo,
            max_observed: hi,
        })
    }

    pub fn min_observed(&self) -> f64 {
        self.min_observed
    }

    pub fn max_observed(&self) -> f64 {
        self.max_observed
    }

    pub fn span(&self) -> f64 {
        self.max_observed - self.min_observed
    }

    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.min_observed) / self.span()
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.span() + self.min_observed
    }
}
