use serde::{Deserialize, Serialize};

use super::{ItemEffects, ModelSpec};

/// Layout of the covariance parameter vector for a spec.
///
/// `theta = [σ_θ, l11, l21, l22]` where `[[l11, 0], [l21, l22]]` is the
/// lower Cholesky factor of the item covariance. Entries absent from the
/// spec are dropped: random intercepts only give `[σ_θ, l11]`, uncorrelated
/// slopes `[σ_θ, l11, l22]`, fixed items `[σ_θ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub items: ItemEffects,
    pub correlated: bool,
}

impl ThetaLayout {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self { items: spec.items, correlated: spec.correlated }
    }

    pub fn len(&self) -> usize {
        match (self.items, self.correlated) {
            (ItemEffects::Fixed, _) => 1,
            (ItemEffects::Intercept, _) => 2,
            (ItemEffects::InterceptAndTreatment, false) => 3,
            (ItemEffects::InterceptAndTreatment, true) => 4,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lower bounds: 0 on Cholesky diagonals, unbounded off-diagonal.
    pub fn lower_bounds(&self) -> Vec<f64> {
        let mut lb = vec![0.0; self.len()];
        if self.correlated {
            lb[2] = f64::NEG_INFINITY;
        }
        lb
    }

    /// Start with every standard deviation equal to `sd` and no correlation.
    pub fn start(&self, sd: f64) -> Vec<f64> {
        let mut t = vec![sd; self.len()];
        if self.correlated {
            t[2] = 0.0;
        }
        t
    }

    /// Expand to the full `(σ_θ, l11, l21, l22)` factor.
    pub fn expand(&self, theta: &[f64]) -> Factors {
        debug_assert_eq!(theta.len(), self.len());
        match (self.items, self.correlated) {
            (ItemEffects::Fixed, _) => Factors { sigma_theta: theta[0], l11: 0.0, l21: 0.0, l22: 0.0 },
            (ItemEffects::Intercept, _) => Factors { sigma_theta: theta[0], l11: theta[1], l21: 0.0, l22: 0.0 },
            (ItemEffects::InterceptAndTreatment, false) => {
                Factors { sigma_theta: theta[0], l11: theta[1], l21: 0.0, l22: theta[2] }
            }
            (ItemEffects::InterceptAndTreatment, true) => {
                Factors { sigma_theta: theta[0], l11: theta[1], l21: theta[2], l22: theta[3] }
            }
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        ["sigma_theta", "l11", "l21", "l22"]
            .into_iter()
            .enumerate()
            .filter(|&(k, _)| match k {
                0 => true,
                1 => self.items != ItemEffects::Fixed,
                2 => self.correlated,
                _ => self.items == ItemEffects::InterceptAndTreatment,
            })
            .map(|(_, n)| n)
            .collect()
    }
}

/// Relative covariance factors in full form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub sigma_theta: f64,
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl Factors {
    pub fn components(&self) -> VarianceComponents {
        let sigma_zeta = self.l21.hypot(self.l22);
        let rho = if sigma_zeta > 0.0 && self.l11 > 0.0 { (self.l21 / sigma_zeta).clamp(-1.0, 1.0) } else { 0.0 };
        VarianceComponents { sigma_theta: self.sigma_theta.abs(), sigma_b: self.l11.abs(), sigma_zeta, rho }
    }
}

/// Random-effect standard deviations and the intercept/slope correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma_theta: f64,
    pub sigma_b: f64,
    pub sigma_zeta: f64,
    pub rho: f64,
}
