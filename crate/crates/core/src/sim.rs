//! Simulation of item-response data with person- and item-dependent
//! treatment effect heterogeneity.
//!
//! Person `j` has `θ_j = β₀ + β₁T_j + β₂X_j + β₃T_jX_j + ε_j`, item `i` has
//! easiness `b_i` and treatment deviation `ζ_i`, and
//! `logit Pr(Y_ij = 1) = θ_j + b_i + ζ_i T_j`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Response, ResponseTable};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quadrature::GaussHermite;

/// Number of Gauss–Hermite nodes used when integrating over `ε`.
pub const CURVE_NODES: usize = 21;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateDist {
    #[default]
    StandardNormal,
}

/// Parameters of the data-generating process.
///
/// When `sigma_zeta = 0` the value of `rho` has no effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_persons: usize,
    pub n_items: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma_b: f64,
    pub sigma_zeta: f64,
    pub rho: f64,
    pub sigma_theta: f64,
    pub covariate_dist: CovariateDist,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_persons: 500,
            n_items: 20,
            beta0: 0.0,
            beta1: 0.3,
            beta2: 0.5,
            beta3: 0.0,
            sigma_b: 1.0,
            sigma_zeta: 0.3,
            rho: 0.0,
            sigma_theta: 1.0,
            covariate_dist: CovariateDist::StandardNormal,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if self.n_persons < 2 {
            return bad("n_persons must be at least 2");
        }
        if self.n_items < 2 {
            return bad("n_items must be at least 2");
        }
        for (name, v) in [("beta0", self.beta0), ("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !v.is_finite() {
                return Err(SimError::Config(format!("{name} must be finite")));
            }
        }
        if !(self.sigma_b >= 0.0 && self.sigma_b.is_finite()) {
            return bad("sigma_b must be finite and >= 0");
        }
        if !(self.sigma_zeta >= 0.0 && self.sigma_zeta.is_finite()) {
            return bad("sigma_zeta must be finite and >= 0");
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [-1, 1]");
        }
        if !(self.sigma_theta > 0.0 && self.sigma_theta.is_finite()) {
            return bad("sigma_theta must be finite and > 0");
        }
        Ok(())
    }

    /// Person-level linear predictor without `ε`.
    pub fn person_mean(&self, treatment: u8, x: f64) -> f64 {
        let t = f64::from(treatment);
        self.beta0 + self.beta1 * t + self.beta2 * x + self.beta3 * t * x
    }
}

/// The configuration together with every realized random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub config: SimConfig,
    pub item_ids: Vec<String>,
    pub b: Vec<f64>,
    pub zeta: Vec<f64>,
    pub person_ids: Vec<String>,
    pub treatment: Vec<u8>,
    pub covariate: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl TrueParams {
    /// Item effects only, for expected-curve calculations.
    pub fn from_items(config: SimConfig, b: Vec<f64>, zeta: Vec<f64>) -> Result<Self, SimError> {
        if b.len() != zeta.len() || b.is_empty() {
            return Err(SimError::Config("b and zeta must be nonempty and of equal length".into()));
        }
        let item_ids = ids("i", b.len());
        Ok(Self {
            config,
            item_ids,
            b,
            zeta,
            person_ids: vec![],
            treatment: vec![],
            covariate: vec![],
            epsilon: vec![],
        })
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|k| format!("{prefix}{k:0width$}")).collect()
}

fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw one dataset. The same config always yields the same table.
pub fn simulate_dataset(config: &SimConfig) -> Result<(ResponseTable, TrueParams), SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (np, ni) = (config.n_persons, config.n_items);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let rho_c = (1.0 - config.rho * config.rho).max(0.0).sqrt();
    let mut b = Vec::with_capacity(ni);
    let mut zeta = Vec::with_capacity(ni);
    for _ in 0..ni {
        let (z1, z2) = (normal(&mut rng), normal(&mut rng));
        b.push(config.sigma_b * z1);
        zeta.push(config.sigma_zeta * (config.rho * z1 + rho_c * z2));
    }

    let mut treatment: Vec<u8> = (0..np).map(|j| u8::from(j < np / 2)).collect();
    treatment.shuffle(&mut rng);
    let covariate: Vec<f64> = match config.covariate_dist {
        CovariateDist::StandardNormal => (0..np).map(|_| normal(&mut rng)).collect(),
    };
    let epsilon: Vec<f64> = (0..np).map(|_| config.sigma_theta * normal(&mut rng)).collect();

    let person_ids = ids("p", np);
    let item_ids = ids("i", ni);
    let mut rows = Vec::with_capacity(np * ni);
    for j in 0..np {
        let theta = config.person_mean(treatment[j], covariate[j]) + epsilon[j];
        let t = f64::from(treatment[j]);
        for i in 0..ni {
            let p = inv_logit(theta + b[i] + zeta[i] * t);
            rows.push(Response {
                person_id: person_ids[j].clone(),
                item_id: item_ids[i].clone(),
                score: u8::from(rng.random::<f64>() < p),
                treatment: treatment[j],
                covariate: Some(covariate[j]),
                subscale: None,
                extra: vec![],
            });
        }
    }
    let table = ResponseTable::new(rows, vec![])?;
    let params = TrueParams { config: config.clone(), item_ids, b, zeta, person_ids, treatment, covariate, epsilon };
    Ok((table, params))
}

/// Expected sum score as a function of the covariate for one treatment
/// group, averaging over `ε` with 21-node Gauss–Hermite quadrature.
pub fn expected_sumscore_curve(
    config: &SimConfig,
    items: &TrueParams,
    x_grid: &[f64],
    group: u8,
) -> Result<Vec<f64>, SimError> {
    expected_sumscore_curve_with_nodes(config, items, x_grid, group, CURVE_NODES)
}

pub fn expected_sumscore_curve_with_nodes(
    config: &SimConfig,
    items: &TrueParams,
    x_grid: &[f64],
    group: u8,
    nodes: usize,
) -> Result<Vec<f64>, SimError> {
    config.validate()?;
    if x_grid.is_empty() {
        return Err(SimError::Config("x grid is empty".into()));
    }
    if group > 1 {
        return Err(SimError::Config("group must be 0 or 1".into()));
    }
    let gh = GaussHermite::new(nodes);
    let t = f64::from(group);
    let shifts: Vec<f64> = items.b.iter().zip(&items.zeta).map(|(b, z)| b + z * t).collect();
    Ok(x_grid
        .iter()
        .map(|&x| {
            let mean = config.person_mean(group, x);
            gh.normal_expectation(config.sigma_theta, |e| shifts.iter().map(|s| inv_logit(mean + e + s)).sum())
        })
        .collect())
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// A person-dependent scenario fitted to mimic an item-dependent one on the
/// sum-score scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Same as the item-dependent config but with `σ_ζ = 0` and the fitted
    /// `β₁`, `β₃`.
    pub person_dependent: SimConfig,
    /// Largest absolute gap between the two scenarios' expected sum scores
    /// over both groups and the grid.
    pub max_gap: f64,
    pub sum_squared_gap: f64,
}

/// Choose `(β₁, β₃)` of a constant-item-effect scenario by least squares so
/// that its treatment-group expected sum-score curve matches the
/// item-dependent scenario on `x_grid`. Items keep the same easiness and
/// lose their treatment deviations, so control curves agree exactly.
pub fn calibrate_person_dependent(
    item_config: &SimConfig,
    items: &TrueParams,
    x_grid: &[f64],
) -> Result<Calibration, SimError> {
    let target = expected_sumscore_curve(item_config, items, x_grid, 1)?;
    let flat = TrueParams::from_items(item_config.clone(), items.b.clone(), vec![0.0; items.b.len()])?;
    let scenario = |p: &[f64]| SimConfig { beta1: p[0], beta3: p[1], sigma_zeta: 0.0, rho: 0.0, ..item_config.clone() };
    let sse = |p: &[f64]| -> f64 {
        match expected_sumscore_curve(&scenario(p), &flat, x_grid, 1) {
            Ok(c) => c.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NelderMeadOptions { ftol: 1e-14, max_evals: 4000, initial_step: 0.5 };
    let start = [item_config.beta1, item_config.beta3];
    let m = nelder_mead(sse, &start, &[f64::NEG_INFINITY; 2], opts);
    let person_dependent = scenario(&m.x);
    let mut max_gap = 0.0f64;
    for g in 0..2u8 {
        let a = expected_sumscore_curve(item_config, items, x_grid, g)?;
        let b = expected_sumscore_curve(&person_dependent, &flat, x_grid, g)?;
        max_gap = a.iter().zip(&b).fold(max_gap, |acc, (u, v)| acc.max((u - v).abs()));
    }
    Ok(Calibration { person_dependent, max_gap, sum_squared_gap: m.f })
}

/// The three-item toy: easiness `{2, 0, −2}`, treatment deviations
/// `ζ = b/2` (perfect correlation stretching the treatment-group item
/// locations), no average effect, covariate slope 1 and a negligible `σ_θ`.
pub fn toy_item_dependent() -> (SimConfig, TrueParams) {
    let config = SimConfig {
        n_persons: 2,
        n_items: 3,
        beta0: 0.0,
        beta1: 0.0,
        beta2: 1.0,
        beta3: 0.0,
        sigma_b: 2.0,
        sigma_zeta: 1.0,
        rho: 1.0,
        sigma_theta: 1e-8,
        covariate_dist: CovariateDist::StandardNormal,
        seed: 0,
    };
    let b = vec![2.0, 0.0, -2.0];
    let zeta = b.iter().map(|v| 0.5 * v).collect();
    let params = TrueParams::from_items(config.clone(), b, zeta).expect("three items");
    (config, params)
}
