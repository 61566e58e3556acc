//! Laplace path checked against adaptive Gauss–Hermite quadrature on
//! person-random-intercept models, where the likelihood factorizes.

mod common;

use common::agq;
use ilhte::model::{build_design, fit, laplace_loglik, FitOptions, FixedTerm, ItemEffects, ModelSpec};

fn fixed_item_spec() -> ModelSpec {
    ModelSpec::new(vec![FixedTerm::Intercept, FixedTerm::Treatment], ItemEffects::Fixed, false).unwrap()
}

#[test]
fn hermite_rule_integrates_polynomials() {
    let (x, w) = agq::hermite_rule(21);
    let m0: f64 = w.iter().sum();
    let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
    let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
    let rp = std::f64::consts::PI.sqrt();
    assert!((m0 - rp).abs() < 1e-12);
    assert!((m2 - rp / 2.0).abs() < 1e-12);
    assert!((m4 - 0.75 * rp).abs() < 1e-11);
}

#[test]
fn single_node_quadrature_is_laplace() {
    let table = common::random_intercept_data(60, 5, 7);
    let design = build_design(&table, &fixed_item_spec()).unwrap();
    let clusters = agq::Clusters::from_design(&design);
    let nodes = agq::hermite_rule(1);
    for (beta, sigma) in [(vec![0.1, -0.4, 0.2, 0.5, 0.0, 0.3], 0.8), (vec![-0.3, 0.0, 0.0, 1.0, -1.0, 0.6], 1.6)] {
        let ours = laplace_loglik(&design, &beta, &[sigma]).unwrap();
        let mut p = beta.clone();
        p.push(f64::ln(sigma));
        let oracle = agq::marginal_loglik(&clusters, &p, &nodes);
        assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
    }
}

#[test]
fn small_model_loglik_close_to_exact() {
    let table = common::random_intercept_data(5, 3, 11);
    let design = build_design(&table, &fixed_item_spec()).unwrap();
    let clusters = agq::Clusters::from_design(&design);
    let beta = vec![0.0; design.x.ncols()];
    let ours = laplace_loglik(&design, &beta, &[1.0]).unwrap();
    let exact = agq::marginal_loglik(&clusters, &[beta, vec![0.0]].concat(), &agq::hermite_rule(41));
    assert!((2.0 * (ours - exact)).abs() < 0.5, "{ours} vs {exact}");
}

#[test]
fn laplace_mle_matches_single_node_oracle_mle() {
    let table = common::random_intercept_data(200, 5, 3);
    let spec = fixed_item_spec();
    let ours = fit(&table, &spec, &FitOptions::default()).unwrap();
    let design = build_design(&table, &spec).unwrap();
    let clusters = agq::Clusters::from_design(&design);
    let (beta, sigma) = agq::agq_mle(&clusters, &ours.beta_hat, ours.sigma_theta_hat, 1);
    assert!((sigma - ours.sigma_theta_hat).abs() < 1e-3, "{sigma} vs {}", ours.sigma_theta_hat);
    for (a, b) in beta.iter().zip(&ours.beta_hat) {
        assert!((a - b).abs() < 1e-3);
    }
}
