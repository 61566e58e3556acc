#![allow(dead_code)]

pub mod agq;

use ilhte::data::{Response, ResponseTable};
use ilhte::sim::{simulate_dataset, SimConfig};

/// Simulated data with constant item effects and no covariate effect.
pub fn random_intercept_data(n_persons: usize, n_items: usize, seed: u64) -> ResponseTable {
    let cfg = SimConfig {
        n_persons,
        n_items,
        beta0: 0.0,
        beta1: 0.3,
        beta2: 0.0,
        beta3: 0.0,
        sigma_b: 1.0,
        sigma_zeta: 0.0,
        rho: 0.0,
        sigma_theta: 1.0,
        seed,
        ..SimConfig::default()
    };
    simulate_dataset(&cfg).expect("valid config").0
}

/// Copy of `table` with every person duplicated under a new id.
pub fn doubled(table: &ResponseTable) -> ResponseTable {
    let mut rows: Vec<Response> = table.rows().to_vec();
    rows.extend(table.rows().iter().map(|r| Response { person_id: format!("{}_dup", r.person_id), ..r.clone() }));
    ResponseTable::new(rows, table.extra_columns().to_vec()).expect("valid table")
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}
