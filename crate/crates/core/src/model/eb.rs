use serde::{Deserialize, Serialize};

use super::{FitResult, ModelError};

/// Item-specific effect: `total_effect = β̂₁ + ζ̂_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTotalEffect {
    pub item_id: String,
    pub b_hat: f64,
    pub zeta_hat: f64,
    pub total_effect: f64,
}

/// Empirical Bayes item intercepts, treatment slopes and total treatment
/// effects from a fit with item treatment slopes.
pub fn empirical_bayes_item_effects(fit: &FitResult) -> Result<Vec<ItemTotalEffect>, ModelError> {
    if !fit.spec.has_item_slope() {
        return Err(ModelError::Spec("empirical Bayes item effects need item treatment slopes".into()));
    }
    let (beta1, _) = fit
        .treatment_effect()
        .ok_or_else(|| ModelError::Spec("model has no treatment term".into()))?;
    Ok(fit
        .eb_items
        .iter()
        .map(|m| ItemTotalEffect {
            item_id: m.item_id.clone(),
            b_hat: m.b_hat,
            zeta_hat: m.zeta_hat,
            total_effect: beta1 + m.zeta_hat,
        })
        .collect())
}
