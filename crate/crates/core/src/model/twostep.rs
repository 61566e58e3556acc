use serde::{Deserialize, Serialize};

use super::{fit, FitOptions, ModelError, ModelSpec};
use crate::data::{DataError, ResponseTable};

/// Person score from the measurement-only model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonScore {
    pub person_id: String,
    pub treatment: u8,
    pub score: f64,
}

/// Score persons with a Rasch model (person and item random intercepts, no
/// treatment terms) and return the person conditional modes.
pub fn rasch_score_twostep(table: &ResponseTable, opts: &FitOptions) -> Result<Vec<PersonScore>, ModelError> {
    let result = fit(table, &ModelSpec::measurement(), opts)?;
    let records = table.person_records();
    Ok(result
        .eb_persons
        .iter()
        .zip(records)
        .map(|(m, r)| PersonScore { person_id: m.person_id.clone(), treatment: r.treatment, score: m.epsilon_hat })
        .collect())
}

/// Difference in means with the homoskedastic OLS standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsEffect {
    pub effect: f64,
    pub se: f64,
    /// Pooled within-group standard deviation of the scores.
    pub pooled_sd: f64,
    /// `effect / pooled_sd`; `None` when the residual variance is zero.
    pub standardized: Option<f64>,
    pub zero_residual_variance: bool,
    pub n: [usize; 2],
}

/// Regress `scores` on a treatment indicator.
pub fn ols_effect(scores: &[f64], treatment: &[u8]) -> Result<OlsEffect, ModelError> {
    if scores.len() != treatment.len() {
        return Err(ModelError::Mismatch("scores and treatment differ in length".into()));
    }
    let mut sum = [0.0; 2];
    let mut n = [0usize; 2];
    for (&s, &t) in scores.iter().zip(treatment) {
        let g = usize::from(t != 0);
        sum[g] += s;
        n[g] += 1;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(ModelError::Spec("both treatment groups must be nonempty".into()));
    }
    let mean = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
    let grand = (sum[0] + sum[1]) / scores.len() as f64;
    let total_ss: f64 = scores.iter().map(|s| (s - grand).powi(2)).sum();
    if total_ss <= 0.0 {
        return Err(DataError::Undefined("scores have zero variance".into()).into());
    }
    let rss: f64 = scores.iter().zip(treatment).map(|(&s, &t)| (s - mean[usize::from(t != 0)]).powi(2)).sum();
    let dof = scores.len() as f64 - 2.0;
    let s2 = if dof > 0.0 { rss / dof } else { 0.0 };
    let zero = s2 <= 1e-14 * total_ss / scores.len() as f64;
    let pooled_sd = if zero { 0.0 } else { s2.sqrt() };
    let effect = mean[1] - mean[0];
    Ok(OlsEffect {
        effect,
        se: (s2 * (1.0 / n[0] as f64 + 1.0 / n[1] as f64)).sqrt(),
        pooled_sd,
        standardized: (!zero).then(|| effect / pooled_sd),
        zero_residual_variance: zero,
        n,
    })
}
