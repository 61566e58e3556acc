use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{DataError, RawResponse, RawTable, ResponseTable};

/// Maps roles to column names in a delimited text file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub person: String,
    pub item: String,
    pub score: String,
    pub treatment: String,
    /// Person-level baseline covariate, if any.
    pub covariate: Option<String>,
    /// Per-item subscale code, if any.
    pub subscale: Option<String>,
    /// Additional person-level numeric columns usable as fixed-effect terms.
    #[serde(default)]
    pub extra: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            person: "person_id".into(),
            item: "item_id".into(),
            score: "score".into(),
            treatment: "treatment".into(),
            covariate: None,
            subscale: None,
            extra: Vec::new(),
        }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | ".")
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
    if header.contains('\t') && !header.contains(',') {
        b'\t'
    } else {
        b','
    }
}

/// Column names of the first non-comment line of a delimited text.
pub fn header_columns(text: &str) -> Result<Vec<String>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(headers.iter().map(String::from).collect())
}

/// Read a comma- or tab-delimited table with integer scores. Rows whose score
/// is missing (`""`, `NA`, `.`) are dropped; lines starting with `#` are
/// ignored. No binary check is applied.
pub fn parse_raw_table<R: Read>(mut source: R, columns: &ColumnMap) -> Result<RawTable, DataError> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| DataError::Csv(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(&text))
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.to_string() })
    };
    let person = find(&columns.person)?;
    let item = find(&columns.item)?;
    let score = find(&columns.score)?;
    let treatment = find(&columns.treatment)?;
    let covariate = columns.covariate.as_deref().map(find).transpose()?;
    let subscale = columns.subscale.as_deref().map(find).transpose()?;
    let extra = columns.extra.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let invalid = |idx: usize| DataError::InvalidValue {
            line,
            column: headers.get(idx).unwrap_or("").to_string(),
            value: field(idx).to_string(),
        };
        let real = |idx: usize| -> Result<f64, DataError> {
            field(idx).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| invalid(idx))
        };
        let integer = |idx: usize| -> Result<i64, DataError> {
            let v = real(idx)?;
            if v.fract() == 0.0 && v.abs() < 1e15 {
                Ok(v as i64)
            } else {
                Err(invalid(idx))
            }
        };

        if is_missing(field(score)) {
            continue;
        }
        let t = integer(treatment)?;
        if t != 0 && t != 1 {
            return Err(invalid(treatment));
        }
        let (p, i) = (field(person), field(item));
        if p.is_empty() {
            return Err(invalid(person));
        }
        if i.is_empty() {
            return Err(invalid(item));
        }
        rows.push(RawResponse {
            person_id: p.to_string(),
            item_id: i.to_string(),
            score: integer(score)?,
            treatment: t as u8,
            covariate: covariate.map(real).transpose()?,
            subscale: subscale.map(real).transpose()?,
            extra: extra.iter().map(|&c| real(c)).collect::<Result<_, _>>()?,
            line,
        });
    }
    Ok(RawTable { rows, extra_columns: columns.extra.clone() })
}

/// Read and validate a binary response table.
pub fn parse_response_table<R: Read>(source: R, columns: &ColumnMap) -> Result<ResponseTable, DataError> {
    parse_raw_table(source, columns)?.into_binary()
}
