//! Closed-form post-estimation quantities: standardization, standard-error
//! inflation from item sampling, the sensitivity threshold, prediction
//! intervals for untested items, the treatment-group item spread and the
//! sum-score slope algebra behind spurious interactions, and attenuation
//! corrections.

mod dataset;

pub use dataset::{analyze_dataset, AnalysisBundle, AnalysisOptions, AnalysisReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FitResult, FixedTerm, ItemTotalEffect, ModelError};

/// Two-sided 5% critical value, as used throughout (not `Φ⁻¹(0.975)`).
pub const Z_CRIT: f64 = 1.96;

/// Huang's logistic–normal constant relating item-curve slopes to the slope
/// of their sum when item locations are normal with SD `σ_b`.
pub const HUANG_CONSTANT: f64 = 0.346;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("reference standard deviation must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("reliability must lie in (0, 1], got {0}")]
    InvalidReliability(f64),
    #[error("{0}")]
    Missing(String),
    #[error("fits were made on different data")]
    FingerprintMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// A fixed effect and its SE after division by a reference SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedEffect {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
}

/// A fit expressed in reference-SD units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedFit {
    /// Product of every reference applied so far.
    pub sigma_theta_ref: f64,
    pub effects: Vec<StandardizedEffect>,
    pub sigma_zeta: f64,
    pub eb_items: Vec<ItemTotalEffect>,
}

impl StandardizedFit {
    /// Divide everything by a further reference.
    pub fn standardize(&self, reference: f64) -> Result<Self, AnalyticsError> {
        check_reference(reference)?;
        Ok(Self {
            sigma_theta_ref: self.sigma_theta_ref * reference,
            effects: self
                .effects
                .iter()
                .map(|e| StandardizedEffect { term: e.term.clone(), estimate: e.estimate / reference, se: e.se / reference })
                .collect(),
            sigma_zeta: self.sigma_zeta / reference,
            eb_items: self
                .eb_items
                .iter()
                .map(|m| ItemTotalEffect {
                    item_id: m.item_id.clone(),
                    b_hat: m.b_hat / reference,
                    zeta_hat: m.zeta_hat / reference,
                    total_effect: m.total_effect / reference,
                })
                .collect(),
        })
    }

    pub fn effect(&self, term: &FixedTerm) -> Option<&StandardizedEffect> {
        let name = term.to_string();
        self.effects.iter().find(|e| e.term == name)
    }
}

fn check_reference(reference: f64) -> Result<(), AnalyticsError> {
    if reference > 0.0 && reference.is_finite() {
        Ok(())
    } else {
        Err(AnalyticsError::NonPositiveReference(reference))
    }
}

/// Divide every fixed effect, SE, `σ̂_ζ` and empirical Bayes item effect by
/// `sigma_theta_ref`. Item effects are included only for fits with item
/// treatment slopes.
pub fn standardize_effects(fit: &FitResult, sigma_theta_ref: f64) -> Result<StandardizedFit, AnalyticsError> {
    check_reference(sigma_theta_ref)?;
    let eb_items = if fit.spec.has_item_slope() && fit.treatment_effect().is_some() {
        crate::model::empirical_bayes_item_effects(fit)?
    } else {
        Vec::new()
    };
    let unit = StandardizedFit {
        sigma_theta_ref: 1.0,
        effects: fit
            .fixed_names
            .iter()
            .zip(fit.beta_hat.iter().zip(&fit.beta_se))
            .map(|(t, (&b, &s))| StandardizedEffect { term: t.clone(), estimate: b, se: s })
            .collect(),
        sigma_zeta: fit.sigma_zeta_hat,
        eb_items,
    };
    unit.standardize(sigma_theta_ref)
}

/// Treatment-effect SE once item sampling is accounted for:
/// `√(V + σ_ζ²/I)` where `V` is the sampling variance ignoring item
/// heterogeneity. Zero items give `+∞`.
pub fn se_inflation(v_rand_intercepts: f64, sigma_zeta: f64, n_items: usize) -> f64 {
    if n_items == 0 {
        return f64::INFINITY;
    }
    (v_rand_intercepts + sigma_zeta * sigma_zeta / n_items as f64).sqrt()
}

/// Smallest `σ_ζ` that would make an effect insignificant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SensitivityGamma {
    Defined { gamma: f64 },
    Undefined { reason: String },
}

impl SensitivityGamma {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Defined { gamma } => Some(*gamma),
            Self::Undefined { .. } => None,
        }
    }
}

/// `Γ = √(I · ((β̂₁/1.96)² − V))`, the IL-HTE SD at which the inflated SE
/// makes `|β̂₁|/SE` exactly 1.96. Undefined when the effect is already
/// insignificant without item heterogeneity.
pub fn sensitivity_gamma(beta1: f64, v_rand_intercepts: f64, n_items: usize) -> SensitivityGamma {
    sensitivity_gamma_with_z(beta1, v_rand_intercepts, n_items, Z_CRIT)
}

pub fn sensitivity_gamma_with_z(beta1: f64, v_rand_intercepts: f64, n_items: usize, z: f64) -> SensitivityGamma {
    let radicand = n_items as f64 * ((beta1 / z).powi(2) - v_rand_intercepts);
    if radicand >= 0.0 && radicand.is_finite() {
        SensitivityGamma::Defined { gamma: radicand.sqrt() }
    } else {
        SensitivityGamma::Undefined { reason: "effect already insignificant".into() }
    }
}

/// Which inputs produced a prediction interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// Sampling variance from the fit with item treatment slopes.
    IlhteFit,
    /// Random-intercepts sampling variance plus `σ_ζ²/I`.
    Decomposed,
}

/// Interval for the treatment effect on a new item from the same population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub low: f64,
    pub high: f64,
    pub source: VarianceSource,
}

/// `β̂₁ ± 1.96 √(V + σ_ζ²)` with `V` the IL-HTE sampling variance.
pub fn prediction_interval(beta1: f64, v_ilhte: f64, sigma_zeta: f64) -> PredictionInterval {
    prediction_interval_with_z(beta1, v_ilhte, sigma_zeta, Z_CRIT, VarianceSource::IlhteFit)
}

/// `β̂₁ ± 1.96 √(V_RI + σ_ζ²/I + σ_ζ²)`.
pub fn prediction_interval_decomposed(beta1: f64, v_rand_intercepts: f64, sigma_zeta: f64, n_items: usize) -> PredictionInterval {
    let v = se_inflation(v_rand_intercepts, sigma_zeta, n_items).powi(2);
    prediction_interval_with_z(beta1, v, sigma_zeta, Z_CRIT, VarianceSource::Decomposed)
}

pub fn prediction_interval_with_z(beta1: f64, v: f64, sigma_zeta: f64, z: f64, source: VarianceSource) -> PredictionInterval {
    let half = z * (v + sigma_zeta * sigma_zeta).sqrt();
    PredictionInterval { low: beta1 - half, high: beta1 + half, source }
}

/// SD of item locations in the treatment group,
/// `σ_b* = √(σ_b² + σ_ζ² + 2ρσ_bσ_ζ)`.
pub fn treatment_group_item_sd(sigma_b: f64, sigma_zeta: f64, rho: f64) -> f64 {
    let r = sigma_b * sigma_b + sigma_zeta * sigma_zeta + 2.0 * rho * sigma_b * sigma_zeta;
    r.max(0.0).sqrt()
}

/// Approximate slope of the sum-score curve, `β_I / √(0.346 σ_b² + 1)`.
pub fn sumscore_slope(beta_item: f64, sigma_b: f64) -> f64 {
    beta_item / (HUANG_CONSTANT * sigma_b * sigma_b + 1.0).sqrt()
}

/// Spurious treatment × covariate slope difference on the sum-score scale
/// produced by item heterogeneity alone.
pub fn confound_gap(beta_item: f64, sigma_b: f64, sigma_zeta: f64, rho: f64) -> f64 {
    let star = treatment_group_item_sd(sigma_b, sigma_zeta, rho);
    sumscore_slope(beta_item, star) - sumscore_slope(beta_item, sigma_b)
}

/// Divide a standardized effect by `√reliability`.
pub fn attenuation_correct(std_effect: f64, reliability: f64) -> Result<f64, AnalyticsError> {
    if !(reliability > 0.0 && reliability <= 1.0) {
        return Err(AnalyticsError::InvalidReliability(reliability));
    }
    Ok(std_effect / reliability.sqrt())
}

/// Treatment × covariate estimates with and without item treatment slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionComparison {
    pub beta3_no_ilhte: f64,
    pub se_no_ilhte: f64,
    pub beta3_ilhte: f64,
    pub se_ilhte: f64,
    /// `β̂₃` without slopes minus `β̂₃` with slopes.
    pub difference: f64,
    /// `√(SE₁² + SE₂²)`.
    pub combined_se: f64,
    pub sigma_b: f64,
    pub sigma_zeta: f64,
    pub rho: f64,
    pub sigma_b_star: f64,
    /// `σ_b*/σ_b` from the model components; `None` when `σ̂_b = 0`.
    pub sd_ratio: Option<f64>,
    /// Ratio of sample SDs of `b̂_i + ζ̂_i` and `b̂_i`.
    pub empirical_sd_ratio: Option<f64>,
}

fn sample_sd(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    Some((x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt())
}

pub fn interaction_comparison(fit_no_ilhte: &FitResult, fit_ilhte: &FitResult) -> Result<InteractionComparison, AnalyticsError> {
    if fit_no_ilhte.data_fingerprint != fit_ilhte.data_fingerprint {
        return Err(AnalyticsError::FingerprintMismatch);
    }
    if !fit_ilhte.spec.has_item_slope() {
        return Err(AnalyticsError::Missing("second fit has no item treatment slopes".into()));
    }
    let term = FixedTerm::TreatmentByCovariate;
    let missing = || AnalyticsError::Missing("treatment:covariate term missing from a fit".into());
    let (b_a, se_a) = fit_no_ilhte.coef(&term).ok_or_else(missing)?;
    let (b_b, se_b) = fit_ilhte.coef(&term).ok_or_else(missing)?;
    let (sb, sz, rho) = (fit_ilhte.sigma_b_hat, fit_ilhte.sigma_zeta_hat, fit_ilhte.rho_hat);
    let star = treatment_group_item_sd(sb, sz, rho);
    let b: Vec<f64> = fit_ilhte.eb_items.iter().map(|m| m.b_hat).collect();
    let bz: Vec<f64> = fit_ilhte.eb_items.iter().map(|m| m.b_hat + m.zeta_hat).collect();
    let empirical_sd_ratio = match (sample_sd(&bz), sample_sd(&b)) {
        (Some(t), Some(c)) if c > 0.0 => Some(t / c),
        _ => None,
    };
    Ok(InteractionComparison {
        beta3_no_ilhte: b_a,
        se_no_ilhte: se_a,
        beta3_ilhte: b_b,
        se_ilhte: se_b,
        difference: b_a - b_b,
        combined_se: se_a.hypot(se_b),
        sigma_b: sb,
        sigma_zeta: sz,
        rho,
        sigma_b_star: star,
        sd_ratio: (sb > 0.0).then(|| star / sb),
        empirical_sd_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn worked_numbers() {
        assert_abs_diff_eq!(se_inflation(0.01, 0.52, 20), 0.02352f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(0.3 / se_inflation(0.01, 0.52, 20), 1.96, epsilon = 0.005);
        assert_abs_diff_eq!(sensitivity_gamma(0.3, 0.01, 20).value().unwrap(), 0.52, epsilon = 0.005);
        assert_abs_diff_eq!(sensitivity_gamma(0.3, 0.01, 10).value().unwrap(), 0.37, epsilon = 0.005);
        assert!(sensitivity_gamma(0.1, 0.01, 20).value().is_none());
        assert_eq!(treatment_group_item_sd(1.0, 1.0, 1.0), 2.0);
        assert_eq!(treatment_group_item_sd(1.0, 1.0, -1.0), 0.0);
        assert_abs_diff_eq!(sumscore_slope(1.0, 1.0), 0.86, epsilon = 0.01);
        assert_abs_diff_eq!(sumscore_slope(1.0, 2.0), 0.65, epsilon = 0.01);
        assert_abs_diff_eq!(confound_gap(1.0, 1.0, 1.0, 1.0), -0.21, epsilon = 0.01);
        assert_abs_diff_eq!(confound_gap(1.0, 1.0, 1.0, -1.0), 0.14, epsilon = 0.01);
        assert_abs_diff_eq!(attenuation_correct(0.27, 0.81).unwrap(), 0.30, epsilon = 1e-12);
    }

    #[test]
    fn interval_forms_agree() {
        let a = prediction_interval(0.3, 0.01 + 0.04 / 20.0, 0.2);
        let b = prediction_interval_decomposed(0.3, 0.01, 0.2, 20);
        assert!((a.low - b.low).abs() < 1e-12 && (a.high - b.high).abs() < 1e-12);
        let c = prediction_interval(0.3, 0.01, 0.2);
        assert_abs_diff_eq!(c.low, -0.138, epsilon = 5e-4);
        assert_abs_diff_eq!(c.high, 0.738, epsilon = 5e-4);
    }

    #[test]
    fn invalid_inputs() {
        assert!(attenuation_correct(0.3, 0.0).is_err());
        assert!(attenuation_correct(0.3, 1.2).is_err());
        assert_eq!(se_inflation(0.01, 0.5, 0), f64::INFINITY);
    }
}
