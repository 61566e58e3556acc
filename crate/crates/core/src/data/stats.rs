use serde::{Deserialize, Serialize};

use super::{DataError, ResponseTable};

/// Cronbach's alpha over listwise-complete persons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub n_used: usize,
    /// Persons without a response to every item.
    pub n_dropped: usize,
}

/// `alpha = I/(I-1) * (1 - sum(var_i) / var_total)` with `n - 1` variances,
/// computed on persons who answered every item.
pub fn cronbach_alpha(table: &ResponseTable) -> Result<AlphaResult, DataError> {
    let n_items = table.n_items();
    if n_items < 2 {
        return Err(DataError::Undefined("alpha needs at least 2 items".into()));
    }
    let mut matrix = vec![vec![None::<u8>; n_items]; table.n_persons()];
    for (r, row) in table.rows().iter().enumerate() {
        matrix[table.person_of(r)][table.item_of(r)] = Some(row.score);
    }
    let complete: Vec<Vec<f64>> = matrix
        .iter()
        .filter_map(|row| row.iter().map(|s| s.map(f64::from)).collect::<Option<Vec<_>>>())
        .collect();
    let n = complete.len();
    let n_dropped = table.n_persons() - n;
    if n < 2 {
        return Err(DataError::Undefined(format!("alpha needs at least 2 complete persons, found {n}")));
    }
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let item_var: f64 = (0..n_items).map(|i| var(&mut complete.iter().map(|row| row[i]))).sum();
    let total_var = var(&mut complete.iter().map(|row| row.iter().sum::<f64>()));
    if total_var <= 0.0 {
        return Err(DataError::Undefined("total score has zero variance".into()));
    }
    let k = n_items as f64;
    Ok(AlphaResult { alpha: k / (k - 1.0) * (1.0 - item_var / total_var), n_used: n, n_dropped })
}

/// Summary of a response table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub n_persons: usize,
    pub n_items: usize,
    pub n_responses: usize,
    /// `None` when alpha is undefined for this table.
    pub alpha: Option<f64>,
    pub alpha_persons_dropped: usize,
    /// Mean item score in the control and treatment groups.
    pub mean_score: [Option<f64>; 2],
    /// Fraction of persons without a response, per item in id order.
    pub missingness: Vec<f64>,
    pub n_treated: usize,
}

pub fn describe(table: &ResponseTable) -> DescriptiveStats {
    let alpha = cronbach_alpha(table).ok();
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    let mut per_item = vec![0usize; table.n_items()];
    for (r, row) in table.rows().iter().enumerate() {
        let g = usize::from(row.treatment);
        sum[g] += f64::from(row.score);
        count[g] += 1;
        per_item[table.item_of(r)] += 1;
    }
    let np = table.n_persons() as f64;
    DescriptiveStats {
        n_persons: table.n_persons(),
        n_items: table.n_items(),
        n_responses: table.len(),
        alpha: alpha.map(|a| a.alpha),
        alpha_persons_dropped: alpha.map_or(table.n_persons(), |a| a.n_dropped),
        mean_score: [0, 1].map(|g| (count[g] > 0).then(|| sum[g] / count[g] as f64)),
        missingness: per_item.iter().map(|&c| 1.0 - c as f64 / np).collect(),
        n_treated: table.person_records().iter().filter(|p| p.treatment == 1).count(),
    }
}
