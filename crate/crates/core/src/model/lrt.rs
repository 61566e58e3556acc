use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{FitResult, ModelError, ThetaLayout};

/// Likelihood-ratio test for item treatment-slope variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    /// `2 (loglik_alt - loglik_null)`, clamped at 0.
    pub deviance_diff: f64,
    pub df: usize,
    pub p_raw: f64,
    /// `p_raw / 2`: the null variance lies on the boundary of its space.
    pub p_boundary: f64,
    /// The alternative fitted worse than the null and the statistic was clamped.
    pub clamped: bool,
}

/// Upper tail of χ² with `df` degrees of freedom at `stat`.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df > 0").sf(stat)
}

impl LrtResult {
    pub fn from_deviance(deviance_diff: f64, df: usize) -> Self {
        let clamped = deviance_diff < 0.0;
        if clamped {
            log::warn!("alternative log-likelihood below null by {}; clamping to 0", -deviance_diff / 2.0);
        }
        let d = deviance_diff.max(0.0);
        let p_raw = chi_square_sf(d, df);
        Self { deviance_diff: d, df, p_raw, p_boundary: p_raw / 2.0, clamped }
    }
}

/// Compare a random-intercepts fit against the same model with item
/// treatment slopes. `df` is the number of added covariance parameters
/// (2 when the slope is correlated with the intercept).
pub fn lrt_ilhte(fit_null: &FitResult, fit_alt: &FitResult) -> Result<LrtResult, ModelError> {
    if fit_null.spec.has_item_slope() || !fit_alt.spec.has_item_slope() || !fit_null.spec.is_nested_in(&fit_alt.spec) {
        return Err(ModelError::Spec(format!(
            "'{}' is not nested in '{}' by item treatment slopes",
            fit_null.spec.describe(),
            fit_alt.spec.describe()
        )));
    }
    if fit_null.data_fingerprint != fit_alt.data_fingerprint {
        return Err(ModelError::Mismatch("fits were made on different data".into()));
    }
    let df = ThetaLayout::for_spec(&fit_alt.spec).len() - ThetaLayout::for_spec(&fit_null.spec).len();
    Ok(LrtResult::from_deviance(2.0 * (fit_alt.loglik - fit_null.loglik), df))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_statistic() {
        let r = LrtResult::from_deviance(0.0, 2);
        assert_eq!((r.p_raw, r.p_boundary), (1.0, 0.5));
    }

    #[test]
    fn table_value() {
        let r = LrtResult::from_deviance(5.99, 2);
        assert!((r.p_raw - 0.05).abs() < 5e-4);
        assert!((r.p_boundary - 0.025).abs() < 5e-4);
        // χ²₂ upper tail is exp(-d/2).
        assert!((r.p_raw - (-5.99f64 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn negative_is_clamped() {
        let r = LrtResult::from_deviance(-1e-3, 2);
        assert!(r.clamped);
        assert_eq!(r.deviance_diff, 0.0);
        assert!(r.p_boundary <= r.p_raw);
    }
}
