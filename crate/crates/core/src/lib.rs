//! Item-level heterogeneous treatment effect (IL-HTE) models for item-response
//! data from randomized trials.
//!
//! The crate covers ingestion of long-format response tables, simulation of
//! item-response data with item-specific treatment effects, Laplace-approximate
//! maximum likelihood for crossed person/item logistic mixed models, and the
//! closed-form diagnostics used to interpret those fits.

pub mod data;
pub mod quadrature;
pub mod sparse;
pub mod model;
pub mod optim;
pub mod sim;
pub mod analytics;
pub mod report;
