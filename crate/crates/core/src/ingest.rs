//! Run-record ingestion.
//!
//! Benchmark runs arrive as a flat CSV with one row per (suite, function,
//! dimension, algorithm, run). Each row carries either an explicit success
//! flag or the best precision the run reached. [`build_response_matrix`]
//! counts attempts and successes per (function, algorithm) cell.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("exactly one of `success` or `best_precision` must be present")]
    AmbiguousOutcome,
    #[error("line {line}: duplicate run key ({key})")]
    DuplicateKey { line: u64, key: String },
    #[error("line {line}: invalid value `{value}` for column `{column}`")]
    InvalidField {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("no records at dimension {0}")]
    NoRecords(u32),
    #[error("need at least 2 {what}, found {found}")]
    TooFew { what: &'static str, found: usize },
    #[error("invalid response matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Observed result of a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Flag(bool),
    /// Best achieved distance to the optimum.
    Precision(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub suite: String,
    pub function_id: String,
    pub dimension: u32,
    pub algorithm: String,
    pub run_id: u64,
    pub outcome: Outcome,
}

/// A run succeeds iff its best precision is at or below the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessCriterion {
    target_precision: f64,
}

impl SuccessCriterion {
    pub fn new(target_precision: f64) -> Result<Self, IngestError> {
        if !(target_precision.is_finite() && target_precision >= 0.0) {
            return Err(IngestError::InvalidField {
                line: 0,
                column: "target_precision",
                value: target_precision.to_string(),
            });
        }
        Ok(Self { target_precision })
    }

    pub fn target_precision(&self) -> f64 {
        self.target_precision
    }

    pub fn is_success(&self, outcome: Outcome) -> bool {
        match outcome {
            Outcome::Flag(flag) => flag,
            Outcome::Precision(p) => p <= self.target_precision,
        }
    }
}

const REQUIRED: [&str; 5] = ["suite", "function_id", "dimension", "algorithm", "run_id"];

/// Parses a header-bearing run-record CSV.
///
/// Column order is free; fields are trimmed. Exactly one of the `success`
/// and `best_precision` columns must be present.
pub fn parse_run_csv<R: Read>(input: R) -> Result<Vec<RunRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or(IngestError::MissingColumn(name))?;
    }
    let [suite_col, function_col, dimension_col, algorithm_col, run_col] = columns;
    let outcome_col = match (position("success"), position("best_precision")) {
        (Some(c), None) => (c, true),
        (None, Some(c)) => (c, false),
        (Some(_), Some(_)) => return Err(IngestError::AmbiguousOutcome),
        (None, None) => return Err(IngestError::MissingColumn("success|best_precision")),
    };

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |col: usize| row.get(col).unwrap_or("");
        let invalid = |column: &'static str, value: &str| IngestError::InvalidField {
            line,
            column,
            value: value.to_string(),
        };

        let dimension = field(dimension_col)
            .parse::<u32>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| invalid("dimension", field(dimension_col)))?;
        let run_id = field(run_col)
            .parse::<u64>()
            .map_err(|_| invalid("run_id", field(run_col)))?;
        let raw = field(outcome_col.0);
        let outcome = if outcome_col.1 {
            match raw.to_ascii_lowercase().as_str() {
                "1" | "true" => Outcome::Flag(true),
                "0" | "false" => Outcome::Flag(false),
                _ => return Err(invalid("success", raw)),
            }
        } else {
            let p = raw
                .parse::<f64>()
                .ok()
                .filter(|p| p.is_finite() && *p >= 0.0)
                .ok_or_else(|| invalid("best_precision", raw))?;
            Outcome::Precision(p)
        };

        let record = RunRecord {
            suite: field(suite_col).to_string(),
            function_id: field(function_col).to_string(),
            dimension,
            algorithm: field(algorithm_col).to_string(),
            run_id,
            outcome,
        };
        let key = (
            record.suite.clone(),
            record.function_id.clone(),
            dimension,
            record.algorithm.clone(),
            run_id,
        );
        if !seen.insert(key) {
            return Err(IngestError::DuplicateKey {
                line,
                key: format!(
                    "{}, {}, {}, {}, {}",
                    record.suite, record.function_id, dimension, record.algorithm, run_id
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Items × persons table of attempt and success counts.
///
/// Counts are stored row-major with one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    items: Vec<String>,
    persons: Vec<String>,
    attempts: Vec<u32>,
    successes: Vec<u32>,
}

impl ResponseMatrix {
    /// Checks label uniqueness, grid sizes and `successes <= attempts`.
    ///
    /// The two-by-two minimum is a separate check, see [`Self::validate_shape`].
    pub fn new(
        items: Vec<String>,
        persons: Vec<String>,
        attempts: Vec<u32>,
        successes: Vec<u32>,
    ) -> Result<Self, IngestError> {
        let bad = |msg: String| Err(IngestError::InvalidMatrix(msg));
        if items.is_empty() || persons.is_empty() {
            return bad("empty item or person list".into());
        }
        for (what, labels) in [("item", &items), ("person", &persons)] {
            let mut unique = HashSet::new();
            if let Some(dup) = labels.iter().find(|l| !unique.insert(l.as_str())) {
                return bad(format!("duplicate {what} label `{dup}`"));
            }
        }
        let cells = items.len() * persons.len();
        if attempts.len() != cells || successes.len() != cells {
            return bad(format!(
                "expected {cells} cells, got {} attempts and {} successes",
                attempts.len(),
                successes.len()
            ));
        }
        if let Some(k) = (0..cells).find(|&k| successes[k] > attempts[k]) {
            return bad(format!(
                "cell ({}, {}) has {} successes out of {} attempts",
                items[k / persons.len()],
                persons[k % persons.len()],
                successes[k],
                attempts[k]
            ));
        }
        Ok(Self {
            items,
            persons,
            attempts,
            successes,
        })
    }

    /// Same shape and labels, every count zero.
    pub fn empty_like(&self) -> Self {
        Self {
            items: self.items.clone(),
            persons: self.persons.clone(),
            attempts: vec![0; self.attempts.len()],
            successes: vec![0; self.successes.len()],
        }
    }

    /// Requires at least two items and two persons, as fitting does.
    pub fn validate_shape(&self) -> Result<(), IngestError> {
        if self.items.len() < 2 {
            return Err(IngestError::TooFew {
                what: "items",
                found: self.items.len(),
            });
        }
        if self.persons.len() < 2 {
            return Err(IngestError::TooFew {
                what: "persons",
                found: self.persons.len(),
            });
        }
        Ok(())
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn attempts(&self, item: usize, person: usize) -> u32 {
        self.attempts[item * self.persons.len() + person]
    }

    pub fn successes(&self, item: usize, person: usize) -> u32 {
        self.successes[item * self.persons.len() + person]
    }

    /// Row-major attempt counts.
    pub fn attempts_flat(&self) -> &[u32] {
        &self.attempts
    }

    pub fn successes_flat(&self) -> &[u32] {
        &self.successes
    }

    pub fn to_json(&self) -> Result<String, IngestError> {
        Ok(serde_json::to_string_pretty(&MatrixDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let doc: MatrixDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    items: Vec<String>,
    persons: Vec<String>,
    attempts: Vec<Vec<u32>>,
    successes: Vec<Vec<u32>>,
}

impl From<&ResponseMatrix> for MatrixDoc {
    fn from(m: &ResponseMatrix) -> Self {
        let rows = |flat: &[u32]| flat.chunks(m.persons.len()).map(<[u32]>::to_vec).collect();
        Self {
            items: m.items.clone(),
            persons: m.persons.clone(),
            attempts: rows(&m.attempts),
            successes: rows(&m.successes),
        }
    }
}

impl TryFrom<MatrixDoc> for ResponseMatrix {
    type Error = IngestError;

    fn try_from(doc: MatrixDoc) -> Result<Self, IngestError> {
        let width = doc.persons.len();
        for (name, rows) in [("attempts", &doc.attempts), ("successes", &doc.successes)] {
            if rows.len() != doc.items.len() || rows.iter().any(|r| r.len() != width) {
                return Err(IngestError::InvalidMatrix(format!(
                    "`{name}` must be {} rows of {width} counts",
                    doc.items.len()
                )));
            }
        }
        ResponseMatrix::new(
            doc.items,
            doc.persons,
            doc.attempts.concat(),
            doc.successes.concat(),
        )
    }
}

/// Ordering for item labels: labels ending in digits compare by their
/// non-numeric prefix, then numerically, so `f2` sorts before `f10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u128>) {
        let prefix_len = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (prefix, digits) = s.split_at(prefix_len);
        (prefix, digits.parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    match (na, nb) {
        (Some(x), Some(y)) => pa.cmp(pb).then(x.cmp(&y)).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Counts attempts and successes per (function, algorithm) at one dimension.
pub fn build_response_matrix(
    records: &[RunRecord],
    criterion: SuccessCriterion,
    dimension: u32,
) -> Result<ResponseMatrix, IngestError> {
    let selected: Vec<&RunRecord> = records.iter().filter(|r| r.dimension == dimension).collect();
    if selected.is_empty() {
        return Err(IngestError::NoRecords(dimension));
    }

    let mut items: Vec<String> = selected.iter().map(|r| r.function_id.clone()).collect();
    items.sort_by(|a, b| natural_cmp(a, b));
    items.dedup();
    let persons: Vec<String> = selected
        .iter()
        .map(|r| r.algorithm.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let item_index: HashMap<&str, usize> =
        items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let person_index: BTreeMap<&str, usize> =
        persons.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let width = persons.len();
    let mut attempts = vec![0u32; items.len() * width];
    let mut successes = vec![0u32; items.len() * width];
    for record in selected {
        let cell = item_index[record.function_id.as_str()] * width
            + person_index[record.algorithm.as_str()];
        attempts[cell] += 1;
        if criterion.is_success(record.outcome) {
            successes[cell] += 1;
        }
    }

    let matrix = ResponseMatrix::new(items, persons, attempts, successes)?;
    matrix.validate_shape()?;
    Ok(matrix)
}
