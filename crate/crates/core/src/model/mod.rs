//! Crossed person/item logistic mixed models.
//!
//! `η = Xβ + ε_person + b_item + ζ_item · T`, fitted by maximizing the Laplace
//! approximation to the marginal likelihood. The covariance parameters are
//! searched by a bounded simplex method and then refined by damped Newton
//! steps on the full Laplace objective.

mod design;
mod eb;
mod fit;
mod lrt;
mod pirls;
mod spec;
mod theta;
mod twostep;

use thiserror::Error;

pub use design::{build_design, Design};
pub use eb::{empirical_bayes_item_effects, ItemTotalEffect};
pub use fit::{fit, fit_design, Convergence, FitOptions, FitResult, ItemMode, PersonMode, StartRecord};
pub use lrt::{lrt_ilhte, LrtResult};
pub use pirls::{laplace_loglik, pirls_conditional_modes, ConditionalModes, Laplace, PirlsOptions, ETA_CAP};
pub use spec::{FixedTerm, ItemEffects, ModelSpec};
pub use theta::{Factors, ThetaLayout, VarianceComponents};
pub use twostep::{ols_effect, rasch_score_twostep, OlsEffect, PersonScore};

use crate::data::DataError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("model needs column '{0}', which the data do not have")]
    MissingColumn(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite value during {context}; iterate = {iterate:?}")]
    NonFinite { context: String, iterate: Vec<f64> },
    #[error("{0}")]
    Mismatch(String),
}
