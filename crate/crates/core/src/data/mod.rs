//! Item-response data in long format.
//!
//! One row per observed (person, item) response. Missing responses are simply
//! absent rows. Person and item ids are opaque strings; dense indices are
//! assigned in sorted id order so that the same data always maps to the same
//! indices regardless of row order.

mod parse;
mod stats;
mod transform;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{header_columns, parse_raw_table, parse_response_table, ColumnMap};
pub use stats::{cronbach_alpha, describe, AlphaResult, DescriptiveStats};
pub use transform::{dichotomize, reverse_code, standardize_covariate, DataWarning};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column '{column}'")]
    MissingColumn { column: String },
    #[error("line {line}: column '{column}' has invalid value '{value}'")]
    InvalidValue { line: u64, column: String, value: String },
    #[error("line {line}: score '{value}' is not binary (dichotomize ordinal scores first)")]
    NonBinaryScore { line: u64, value: i64 },
    #[error("treatment varies within person '{person_id}'")]
    InconsistentTreatment { person_id: String },
    #[error("column '{column}' varies within person '{person_id}'")]
    InconsistentPersonValue { person_id: String, column: String },
    #[error("subscale varies within item '{item_id}'")]
    InconsistentSubscale { item_id: String },
    #[error("duplicate response for person '{person_id}' on item '{item_id}'")]
    DuplicateResponse { person_id: String, item_id: String },
    #[error("need at least 2 distinct {what}, found {found}")]
    TooFew { what: &'static str, found: usize },
    #[error("unknown item '{item_id}'")]
    UnknownItem { item_id: String },
    #[error("table has no covariate column")]
    NoCovariate,
    #[error("covariate has zero variance")]
    DegenerateCovariate,
    #[error("{0}")]
    Undefined(String),
}

/// A single observed response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub person_id: String,
    pub item_id: String,
    pub score: u8,
    pub treatment: u8,
    pub covariate: Option<f64>,
    pub subscale: Option<f64>,
    /// Values of additional person-level columns, aligned with
    /// [`ResponseTable::extra_columns`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
}

/// Validated long-format binary response table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    rows: Vec<Response>,
    extra_columns: Vec<String>,
    persons: Vec<String>,
    items: Vec<String>,
    person_index: Vec<usize>,
    item_index: Vec<usize>,
}

impl ResponseTable {
    /// Validate rows and build the id maps. Row order is preserved.
    pub fn new(rows: Vec<Response>, extra_columns: Vec<String>) -> Result<Self, DataError> {
        let mut person_rows: BTreeMap<&str, usize> = BTreeMap::new();
        let mut item_rows: BTreeMap<&str, usize> = BTreeMap::new();
        let mut seen: HashMap<(&str, &str), ()> = HashMap::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.extra.len(), extra_columns.len(), "extra values must match extra columns");
            if seen.insert((row.person_id.as_str(), row.item_id.as_str()), ()).is_some() {
                return Err(DataError::DuplicateResponse {
                    person_id: row.person_id.clone(),
                    item_id: row.item_id.clone(),
                });
            }
            match person_rows.get(row.person_id.as_str()) {
                Some(&first) => check_person_consistency(&rows[first], row, &extra_columns)?,
                None => {
                    person_rows.insert(&row.person_id, r);
                }
            }
            match item_rows.get(row.item_id.as_str()) {
                Some(&first) => {
                    if !same_opt(rows[first].subscale, row.subscale) {
                        return Err(DataError::InconsistentSubscale { item_id: row.item_id.clone() });
                    }
                }
                None => {
                    item_rows.insert(&row.item_id, r);
                }
            }
        }
        if person_rows.len() < 2 {
            return Err(DataError::TooFew { what: "persons", found: person_rows.len() });
        }
        if item_rows.len() < 2 {
            return Err(DataError::TooFew { what: "items", found: item_rows.len() });
        }
        let persons: Vec<String> = person_rows.keys().map(|s| s.to_string()).collect();
        let items: Vec<String> = item_rows.keys().map(|s| s.to_string()).collect();
        let p_lookup: HashMap<&str, usize> = persons.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let i_lookup: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let person_index = rows.iter().map(|r| p_lookup[r.person_id.as_str()]).collect();
        let item_index = rows.iter().map(|r| i_lookup[r.item_id.as_str()]).collect();
        Ok(Self { rows, extra_columns, persons, items, person_index, item_index })
    }

    pub fn rows(&self) -> &[Response] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extra_columns(&self) -> &[String] {
        &self.extra_columns
    }

    /// Sorted distinct person ids; position is the dense person index.
    pub fn person_ids(&self) -> &[String] {
        &self.persons
    }

    /// Sorted distinct item ids; position is the dense item index.
    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Dense person index of row `r`.
    pub fn person_of(&self, r: usize) -> usize {
        self.person_index[r]
    }

    /// Dense item index of row `r`.
    pub fn item_of(&self, r: usize) -> usize {
        self.item_index[r]
    }

    pub fn has_covariate(&self) -> bool {
        self.rows.first().is_some_and(|r| r.covariate.is_some())
    }

    pub fn has_subscale(&self) -> bool {
        self.rows.first().is_some_and(|r| r.subscale.is_some())
    }

    /// One row per person (dense order): treatment, covariate and extra values.
    pub fn person_records(&self) -> Vec<PersonRecord> {
        let mut out: Vec<Option<PersonRecord>> = vec![None; self.persons.len()];
        for (r, row) in self.rows.iter().enumerate() {
            let slot = &mut out[self.person_index[r]];
            if slot.is_none() {
                *slot = Some(PersonRecord {
                    treatment: row.treatment,
                    covariate: row.covariate,
                    extra: row.extra.clone(),
                });
            }
        }
        out.into_iter().map(|p| p.expect("every person has a row")).collect()
    }

    /// Subscale code per item (dense order), when the column is present.
    pub fn item_subscales(&self) -> Option<Vec<f64>> {
        if !self.has_subscale() {
            return None;
        }
        let mut out = vec![0.0; self.items.len()];
        for (r, row) in self.rows.iter().enumerate() {
            out[self.item_index[r]] = row.subscale.unwrap_or(0.0);
        }
        Some(out)
    }

    /// SHA-256 of the rows in (person, item) order; independent of row order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|&r| (self.person_index[r], self.item_index[r]));
        let mut hasher = Sha256::new();
        for r in order {
            let row = &self.rows[r];
            let line = format!(
                "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{:?}\u{1f}{:?}\u{1f}{:?}\n",
                row.person_id, row.item_id, row.score, row.treatment, row.covariate, row.subscale, row.extra
            );
            hasher.update(line.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Rebuild with transformed rows; ids and validation are recomputed.
    pub(crate) fn map_rows(&self, f: impl FnMut(&Response) -> Response) -> Result<Self, DataError> {
        Self::new(self.rows.iter().map(f).collect(), self.extra_columns.clone())
    }
}

/// Person-level values shared by all of a person's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub treatment: u8,
    pub covariate: Option<f64>,
    pub extra: Vec<f64>,
}

/// Same as [`ResponseTable`] but with unvalidated integer scores, as read
/// from ordinal instruments before dichotomization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: Vec<RawResponse>,
    pub extra_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub person_id: String,
    pub item_id: String,
    pub score: i64,
    pub treatment: u8,
    pub covariate: Option<f64>,
    pub subscale: Option<f64>,
    pub extra: Vec<f64>,
    /// 1-based line in the source, for error messages.
    pub line: u64,
}

impl RawTable {
    /// Convert to a binary table; every score must already be 0 or 1.
    pub fn into_binary(self) -> Result<ResponseTable, DataError> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for r in self.rows {
            if r.score != 0 && r.score != 1 {
                return Err(DataError::NonBinaryScore { line: r.line, value: r.score });
            }
            let score = r.score as u8;
            rows.push(r.into_response(score));
        }
        ResponseTable::new(rows, self.extra_columns)
    }
}

impl RawResponse {
    pub(crate) fn into_response(self, score: u8) -> Response {
        Response {
            person_id: self.person_id,
            item_id: self.item_id,
            score,
            treatment: self.treatment,
            covariate: self.covariate,
            subscale: self.subscale,
            extra: self.extra,
        }
    }
}

impl From<&ResponseTable> for RawTable {
    fn from(t: &ResponseTable) -> Self {
        let rows = t
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| RawResponse {
                person_id: r.person_id.clone(),
                item_id: r.item_id.clone(),
                score: i64::from(r.score),
                treatment: r.treatment,
                covariate: r.covariate,
                subscale: r.subscale,
                extra: r.extra.clone(),
                line: i as u64 + 2,
            })
            .collect();
        RawTable { rows, extra_columns: t.extra_columns.clone() }
    }
}

fn same_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        (None, None) => true,
        _ => false,
    }
}

fn check_person_consistency(first: &Response, row: &Response, extra: &[String]) -> Result<(), DataError> {
    if first.treatment != row.treatment {
        return Err(DataError::InconsistentTreatment { person_id: row.person_id.clone() });
    }
    if !same_opt(first.covariate, row.covariate) {
        return Err(DataError::InconsistentPersonValue {
            person_id: row.person_id.clone(),
            column: "covariate".into(),
        });
    }
    for (k, name) in extra.iter().enumerate() {
        if first.extra[k] != row.extra[k] {
            return Err(DataError::InconsistentPersonValue {
                person_id: row.person_id.clone(),
                column: name.clone(),
            });
        }
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::test_util::row;
    use super::*;

    #[test]
    fn ids_are_sorted_and_indexed() {
        let t = ResponseTable::new(
            vec![row("p2", "b", 1, 0), row("p1", "a", 0, 1), row("p1", "b", 1, 1), row("p2", "a", 0, 0)],
            vec![],
        )
        .unwrap();
        assert_eq!(t.person_ids(), ["p1", "p2"]);
        assert_eq!(t.item_ids(), ["a", "b"]);
        assert_eq!((t.person_of(0), t.item_of(0)), (1, 1));
        assert_eq!(t.person_records()[0].treatment, 1);
    }

    #[test]
    fn duplicate_pair_rejected() {
        let err = ResponseTable::new(
            vec![row("p1", "i1", 1, 0), row("p1", "i1", 0, 0), row("p2", "i2", 0, 0)],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateResponse { .. }));
    }

    #[test]
    fn too_few_items_rejected() {
        let err = ResponseTable::new(vec![row("p1", "i1", 1, 0), row("p2", "i1", 0, 1)], vec![]).unwrap_err();
        assert_eq!(err, DataError::TooFew { what: "items", found: 1 });
    }

    #[test]
    fn subscale_must_be_constant_within_item() {
        let mut a = row("p1", "i1", 1, 0);
        a.subscale = Some(1.0);
        let mut b = row("p2", "i1", 1, 0);
        b.subscale = Some(-1.0);
        let err = ResponseTable::new(vec![a, b], vec![]).unwrap_err();
        assert!(matches!(err, DataError::InconsistentSubscale { .. }));
    }
}
