//! Independent reference for random-intercept logistic models: adaptive
//! Gauss–Hermite marginal likelihood with nodes from the Golub–Welsch
//! eigenproblem, maximized by damped Newton on finite differences.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use ilhte::model::Design;

/// Physicists' Gauss–Hermite rule (weight `exp(-x²)`).
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Per-person fixed parts and responses.
pub struct Clusters {
    x: Vec<Vec<Vec<f64>>>,
    y: Vec<Vec<f64>>,
    pub n_fixed: usize,
}

impl Clusters {
    pub fn from_design(d: &Design) -> Self {
        let np = d.person_ids.len();
        let mut x = vec![Vec::new(); np];
        let mut y = vec![Vec::new(); np];
        for o in 0..d.y.len() {
            x[d.person[o]].push(d.x.row(o).iter().copied().collect());
            y[d.person[o]].push(d.y[o]);
        }
        Self { x, y, n_fixed: d.x.ncols() }
    }
}

fn log_lik_obs(y: f64, eta: f64) -> f64 {
    // log σ(s) = -log(1 + e^{-s}), with s = ±η.
    let s = if y > 0.5 { eta } else { -eta };
    -((-s).max(0.0) + (-s.abs()).exp().ln_1p())
}

/// `∫ Π p(y | η_o + σz) φ(z) dz` in logs, adaptively centred.
fn cluster_loglik(eta: &[f64], y: &[f64], sigma: f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let g = |z: f64| -> f64 { eta.iter().zip(y).map(|(e, &yy)| log_lik_obs(yy, e + sigma * z)).sum::<f64>() - 0.5 * z * z };
    // Newton for the mode of g.
    let mut z = 0.0;
    let mut curv = 1.0;
    for _ in 0..100 {
        let (mut d1, mut d2) = (-z, -1.0);
        for (e, &yy) in eta.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(e + sigma * z)).exp());
            d1 += sigma * (yy - p);
            d2 -= sigma * sigma * p * (1.0 - p);
        }
        curv = -d2;
        let step = d1 / curv;
        z += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let scale = (2.0 / curv).sqrt();
    let g0 = g(z);
    let s: f64 = nodes.0.iter().zip(&nodes.1).map(|(&x, &w)| w * (g(z + scale * x) - g0 + x * x).exp()).sum();
    g0 + (scale * s / (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Marginal log-likelihood at `params = [β…, log σ]`.
pub fn marginal_loglik(c: &Clusters, params: &[f64], nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (beta, ls) = params.split_at(c.n_fixed);
    let sigma = ls[0].exp();
    c.x.iter()
        .zip(&c.y)
        .map(|(xs, ys)| {
            let eta: Vec<f64> = xs.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
            cluster_loglik(&eta, ys, sigma, nodes)
        })
        .sum()
}

/// Maximize the marginal log-likelihood from `start`; returns `(β, σ)`.
pub fn agq_mle(c: &Clusters, start_beta: &[f64], start_sigma: f64, n_nodes: usize) -> (Vec<f64>, f64) {
    let nodes = hermite_rule(n_nodes);
    let mut p: Vec<f64> = start_beta.iter().copied().chain([start_sigma.max(0.05).ln()]).collect();
    let n = p.len();
    let f = |q: &[f64]| -marginal_loglik(c, q, &nodes);
    let mut f0 = f(&p);
    let h = 1e-4;
    for _ in 0..100 {
        let mut g = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let shift = |q: &[f64], moves: &[(usize, f64)]| {
            let mut r = q.to_vec();
            for &(k, d) in moves {
                r[k] += d;
            }
            r
        };
        let fp: Vec<f64> = (0..n).map(|k| f(&shift(&p, &[(k, h)]))).collect();
        let fm: Vec<f64> = (0..n).map(|k| f(&shift(&p, &[(k, -h)]))).collect();
        for a in 0..n {
            g[a] = (fp[a] - fm[a]) / (2.0 * h);
            hess[(a, a)] = (fp[a] - 2.0 * f0 + fm[a]) / (h * h);
            for b in 0..a {
                let fpp = f(&shift(&p, &[(a, h), (b, h)]));
                let fmm = f(&shift(&p, &[(a, -h), (b, -h)]));
                let v = (fpp - fp[a] - fp[b] + 2.0 * f0 - fm[a] - fm[b] + fmm) / (2.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        let mut lambda = 0.0;
        let mut moved = false;
        for _ in 0..30 {
            let m = &hess + DMatrix::identity(n, n) * lambda;
            if let Some(ch) = m.cholesky() {
                let d = -ch.solve(&g);
                let cand: Vec<f64> = p.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                let fc = f(&cand);
                if fc <= f0 {
                    let dec = f0 - fc;
                    p = cand;
                    f0 = fc;
                    moved = true;
                    if dec < 1e-10 {
                        return (p[..n - 1].to_vec(), p[n - 1].exp());
                    }
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
        }
        if !moved {
            break;
        }
    }
    (p[..n - 1].to_vec(), p[n - 1].exp())
}
