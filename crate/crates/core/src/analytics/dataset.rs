//! Whole-dataset analysis: the standard fits plus every derived quantity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    attenuation_correct, interaction_comparison, prediction_interval_with_z, se_inflation, sensitivity_gamma_with_z,
    standardize_effects, treatment_group_item_sd, AnalyticsError, InteractionComparison, StandardizedEffect,
    StandardizedFit, VarianceSource, Z_CRIT,
};
use crate::data::{cronbach_alpha, AlphaResult, ResponseTable};
use crate::model::{
    empirical_bayes_item_effects, fit, lrt_ilhte, ols_effect, rasch_score_twostep, FitOptions, FitResult,
    ItemTotalEffect, LrtResult, ModelSpec, OlsEffect,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub fit: FitOptions,
    /// Critical value for Γ and the prediction interval.
    pub z: f64,
    /// Variance feeding the prediction interval.
    pub pi_source: VarianceSource,
    /// Also fit the interaction models when a covariate is present.
    pub interaction: bool,
    /// Also fit the treatment × subscale model when subscales are present.
    pub subscale: bool,
    /// Also run the two-step scoring comparison.
    pub twostep: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            z: Z_CRIT,
            pi_source: VarianceSource::IlhteFit,
            interaction: true,
            subscale: true,
            twostep: true,
        }
    }
}

/// One row of per-dataset results, in reference-SD units where applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_persons: usize,
    pub n_items: usize,
    pub n_responses: usize,
    pub covariate_used: bool,
    /// `σ̂_θ` of the treatment-only model.
    pub sigma_theta_ref: f64,
    /// Fixed effects of the IL-HTE fit divided by `sigma_theta_ref`.
    pub std_effects: Vec<StandardizedEffect>,
    pub beta1_ri: f64,
    pub se_ri: f64,
    pub beta1_ilhte: f64,
    pub se_ilhte: f64,
    pub sigma_b: f64,
    pub sigma_zeta: f64,
    pub rho: f64,
    /// IL-HTE SE over random-intercepts SE.
    pub se_ratio: f64,
    /// The same ratio predicted from the random-intercepts SE and `σ̂_ζ`.
    pub se_ratio_closed_form: f64,
    pub gamma: Option<f64>,
    pub gamma_note: Option<String>,
    pub pi_low: f64,
    pub pi_high: f64,
    pub pi_source: VarianceSource,
    pub sigma_b_star: f64,
    pub sd_ratio: Option<f64>,
    pub lrt_deviance_diff: f64,
    pub lrt_df: usize,
    pub lrt_p_raw: f64,
    pub lrt_p_boundary: f64,
    pub alpha: Option<f64>,
    pub twostep_effect: Option<f64>,
    pub corrected_twostep_effect: Option<f64>,
    pub beta3_difference: Option<f64>,
    pub all_converged: bool,
}

impl AnalysisReport {
    /// Column names and values for a flat CSV row; standardized effects
    /// become `std_<term>` and `std_se_<term>` columns.
    pub fn flat(&self) -> Vec<(String, String)> {
        fn opt(x: Option<f64>) -> String {
            x.map_or_else(String::new, |v| v.to_string())
        }
        let mut out: Vec<(String, String)> = vec![
            ("n_persons".into(), self.n_persons.to_string()),
            ("n_items".into(), self.n_items.to_string()),
            ("n_responses".into(), self.n_responses.to_string()),
            ("covariate_used".into(), self.covariate_used.to_string()),
            ("sigma_theta_ref".into(), self.sigma_theta_ref.to_string()),
        ];
        for e in &self.std_effects {
            out.push((format!("std_{}", e.term), e.estimate.to_string()));
            out.push((format!("std_se_{}", e.term), e.se.to_string()));
        }
        let rest: Vec<(&str, String)> = vec![
            ("beta1_ri", self.beta1_ri.to_string()),
            ("se_ri", self.se_ri.to_string()),
            ("beta1_ilhte", self.beta1_ilhte.to_string()),
            ("se_ilhte", self.se_ilhte.to_string()),
            ("sigma_b", self.sigma_b.to_string()),
            ("sigma_zeta", self.sigma_zeta.to_string()),
            ("rho", self.rho.to_string()),
            ("se_ratio", self.se_ratio.to_string()),
            ("se_ratio_closed_form", self.se_ratio_closed_form.to_string()),
            ("gamma", opt(self.gamma)),
            ("gamma_note", self.gamma_note.clone().unwrap_or_default()),
            ("pi_low", self.pi_low.to_string()),
            ("pi_high", self.pi_high.to_string()),
            ("pi_source", serde_json::to_value(self.pi_source).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
            ("sigma_b_star", self.sigma_b_star.to_string()),
            ("sd_ratio", opt(self.sd_ratio)),
            ("lrt_deviance_diff", self.lrt_deviance_diff.to_string()),
            ("lrt_df", self.lrt_df.to_string()),
            ("lrt_p_raw", self.lrt_p_raw.to_string()),
            ("lrt_p_boundary", self.lrt_p_boundary.to_string()),
            ("alpha", opt(self.alpha)),
            ("twostep_effect", opt(self.twostep_effect)),
            ("corrected_twostep_effect", opt(self.corrected_twostep_effect)),
            ("beta3_difference", opt(self.beta3_difference)),
            ("all_converged", self.all_converged.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }
}

/// Everything computed for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub report: AnalysisReport,
    /// Keyed by `model1` … `model5` and `subscale`.
    pub fits: BTreeMap<String, FitResult>,
    pub standardized: StandardizedFit,
    /// Empirical Bayes item effects of the IL-HTE fit, logit scale.
    pub eb_items: Vec<ItemTotalEffect>,
    pub lrt: LrtResult,
    pub alpha: Option<AlphaResult>,
    pub twostep: Option<OlsEffect>,
    pub interaction: Option<InteractionComparison>,
}

/// Fit the treatment-only, random-intercepts and IL-HTE models (plus the
/// interaction and subscale models when the data allow) and derive every
/// closed-form quantity. Without a covariate column the covariate terms are
/// dropped from every model.
pub fn analyze_dataset(table: &ResponseTable, opts: &AnalysisOptions) -> Result<AnalysisBundle, AnalyticsError> {
    let cov = table.has_covariate();
    let spec = |k: u8| -> Result<ModelSpec, AnalyticsError> {
        let s = ModelSpec::numbered(k)?;
        Ok(if cov { s } else { s.without_covariate() })
    };
    let mut fits = BTreeMap::new();
    let m1 = fit(table, &spec(1)?, &opts.fit)?;
    let m2 = if cov { fit(table, &spec(2)?, &opts.fit)? } else { m1.clone() };
    let m3 = fit(table, &spec(3)?, &opts.fit)?;

    let reference = m1.sigma_theta_hat;
    let standardized = standardize_effects(&m3, reference)?;
    let (b_ri, se_ri) = m2.treatment_effect().ok_or_else(|| AnalyticsError::Missing("no treatment term".into()))?;
    let (b_il, se_il) = m3.treatment_effect().ok_or_else(|| AnalyticsError::Missing("no treatment term".into()))?;
    let n_items = table.n_items();

    let se_ratio = se_il / se_ri;
    let se_ratio_closed_form = se_inflation(se_ri * se_ri, m3.sigma_zeta_hat, n_items) / se_ri;
    let gamma = sensitivity_gamma_with_z(b_ri / reference, (se_ri / reference).powi(2), n_items, opts.z);
    let pi_var = match opts.pi_source {
        VarianceSource::IlhteFit => (se_il / reference).powi(2),
        VarianceSource::Decomposed => se_inflation((se_ri / reference).powi(2), m3.sigma_zeta_hat / reference, n_items).powi(2),
    };
    let pi = prediction_interval_with_z(b_il / reference, pi_var, m3.sigma_zeta_hat / reference, opts.z, opts.pi_source);
    let sigma_b_star = treatment_group_item_sd(m3.sigma_b_hat, m3.sigma_zeta_hat, m3.rho_hat);
    let lrt = lrt_ilhte(&m2, &m3)?;
    let eb_items = empirical_bayes_item_effects(&m3)?;

    let alpha = cronbach_alpha(table).ok();
    let twostep = if opts.twostep {
        let scores = rasch_score_twostep(table, &opts.fit)?;
        let s: Vec<f64> = scores.iter().map(|p| p.score).collect();
        let t: Vec<u8> = scores.iter().map(|p| p.treatment).collect();
        Some(ols_effect(&s, &t)?)
    } else {
        None
    };
    let twostep_effect = twostep.as_ref().and_then(|o| o.standardized);
    let corrected = match (twostep_effect, alpha) {
        (Some(e), Some(a)) => attenuation_correct(e, a.alpha).ok(),
        _ => None,
    };

    let interaction = if cov && opts.interaction {
        let m4 = fit(table, &spec(4)?, &opts.fit)?;
        let m5 = fit(table, &spec(5)?, &opts.fit)?;
        let cmp = interaction_comparison(&m4, &m5)?;
        fits.insert("model4".to_string(), m4);
        fits.insert("model5".to_string(), m5);
        Some(cmp)
    } else {
        None
    };
    if opts.subscale && table.has_subscale() {
        fits.insert("subscale".to_string(), fit(table, &ModelSpec::subscale(cov), &opts.fit)?);
    }

    let report = AnalysisReport {
        n_persons: table.n_persons(),
        n_items,
        n_responses: table.len(),
        covariate_used: cov,
        sigma_theta_ref: reference,
        std_effects: standardized.effects.clone(),
        beta1_ri: b_ri,
        se_ri,
        beta1_ilhte: b_il,
        se_ilhte: se_il,
        sigma_b: m3.sigma_b_hat,
        sigma_zeta: m3.sigma_zeta_hat,
        rho: m3.rho_hat,
        se_ratio,
        se_ratio_closed_form,
        gamma: gamma.value(),
        gamma_note: match &gamma {
            super::SensitivityGamma::Undefined { reason } => Some(reason.clone()),
            super::SensitivityGamma::Defined { .. } => None,
        },
        pi_low: pi.low,
        pi_high: pi.high,
        pi_source: pi.source,
        sigma_b_star,
        sd_ratio: (m3.sigma_b_hat > 0.0).then(|| sigma_b_star / m3.sigma_b_hat),
        lrt_deviance_diff: lrt.deviance_diff,
        lrt_df: lrt.df,
        lrt_p_raw: lrt.p_raw,
        lrt_p_boundary: lrt.p_boundary,
        alpha: alpha.map(|a| a.alpha),
        twostep_effect,
        corrected_twostep_effect: corrected,
        beta3_difference: interaction.as_ref().map(|c| c.difference),
        all_converged: false,
    };
    fits.insert("model1".to_string(), m1);
    fits.insert("model2".to_string(), m2);
    fits.insert("model3".to_string(), m3);
    let all_converged = fits.values().all(|f| f.convergence.converged);
    Ok(AnalysisBundle {
        report: AnalysisReport { all_converged, ..report },
        fits,
        standardized,
        eb_items,
        lrt,
        alpha,
        twostep,
        interaction,
    })
}
