use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{DataError, RawTable, ResponseTable};

/// Non-fatal conditions raised while transforming a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataWarning {
    /// The cutpoint does not split the observed score range.
    CutpointOutsideRange { cutpoint: i64, min: i64, max: i64 },
    /// After dichotomizing, every response to this item has the same value.
    DegenerateItem { item_id: String, value: u8 },
}

/// `score := 1` when the ordinal score is at least `cutpoint`, else 0.
pub fn dichotomize(raw: &RawTable, cutpoint: i64) -> Result<(ResponseTable, Vec<DataWarning>), DataError> {
    let mut warnings = Vec::new();
    let min = raw.rows.iter().map(|r| r.score).min().unwrap_or(0);
    let max = raw.rows.iter().map(|r| r.score).max().unwrap_or(0);
    if cutpoint <= min || cutpoint > max {
        log::warn!("cutpoint {cutpoint} outside observed score range [{min}, {max}]");
        warnings.push(DataWarning::CutpointOutsideRange { cutpoint, min, max });
    }
    let rows = raw
        .rows
        .iter()
        .map(|r| {
            let s = u8::from(r.score >= cutpoint);
            r.clone().into_response(s)
        })
        .collect::<Vec<_>>();

    let mut per_item: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for r in &rows {
        let e = per_item.entry(&r.item_id).or_default();
        if r.score == 1 {
            e.1 = true;
        } else {
            e.0 = true;
        }
    }
    for (item, (zero, one)) in per_item {
        if zero != one {
            log::warn!("item '{item}' is constant after dichotomizing");
            warnings.push(DataWarning::DegenerateItem { item_id: item.to_string(), value: u8::from(one) });
        }
    }
    let table = ResponseTable::new(rows, raw.extra_columns.clone())?;
    Ok((table, warnings))
}

/// Flip `score` to `1 - score` on the listed items.
pub fn reverse_code<S: AsRef<str>>(table: &ResponseTable, item_ids: &[S]) -> Result<ResponseTable, DataError> {
    let set: BTreeSet<&str> = item_ids.iter().map(AsRef::as_ref).collect();
    for id in &set {
        if table.item_ids().binary_search_by(|s| s.as_str().cmp(id)).is_err() {
            return Err(DataError::UnknownItem { item_id: id.to_string() });
        }
    }
    if set.is_empty() {
        return Ok(table.clone());
    }
    table.map_rows(|r| {
        let mut r = r.clone();
        if set.contains(r.item_id.as_str()) {
            r.score = 1 - r.score;
        }
        r
    })
}

/// Standardize the person-level covariate to sample mean 0 and SD 1 (one
/// value per person, `n - 1` denominator).
pub fn standardize_covariate(table: &ResponseTable) -> Result<ResponseTable, DataError> {
    if !table.has_covariate() {
        return Err(DataError::NoCovariate);
    }
    let values: Vec<f64> = table.person_records().iter().map(|p| p.covariate.unwrap_or(0.0)).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || sd <= 1e-12 * mean.abs().max(1.0) {
        return Err(DataError::DegenerateCovariate);
    }
    table.map_rows(|r| {
        let mut r = r.clone();
        r.covariate = r.covariate.map(|x| (x - mean) / sd);
        r
    })
}
