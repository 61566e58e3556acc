use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pirls::{ConditionalModes, Laplace, PirlsOptions};
use super::{build_design, Design, FixedTerm, ItemEffects, ModelError, ModelSpec, ThetaLayout};
use crate::data::ResponseTable;
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Inner tolerance: relative Newton decrement of the penalized deviance.
    pub pirls_tol: f64,
    pub pirls_max_iter: usize,
    /// Simplex stops when the objective spread is below `outer_tol · max(1, |f|)`.
    pub outer_tol: f64,
    /// Objective evaluations per simplex start.
    pub max_evals: usize,
    /// Number of fixed starts used, in order: unit variances, halved, doubled.
    pub restarts: usize,
    /// Refine the simplex optimum with finite-difference Newton steps.
    pub polish: bool,
    pub polish_max_iter: usize,
    /// Relative finite-difference step, `h = fd_step · max(1, |x|)`.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            pirls_tol: 1e-8,
            pirls_max_iter: 200,
            outer_tol: 1e-6,
            max_evals: 2000,
            restarts: 3,
            polish: true,
            polish_max_iter: 25,
            fd_step: 1e-4,
        }
    }
}

impl FitOptions {
    fn start_sds(&self) -> Vec<f64> {
        [1.0, 0.5f64.sqrt(), 2.0f64.sqrt()].into_iter().take(self.restarts.clamp(1, 3)).collect()
    }
}

/// One simplex run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    /// Starting standard deviation for every variance component.
    pub start_sd: f64,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// Simplex iterations of the winning start plus Newton refinement steps.
    pub outer_iterations: usize,
    pub function_evaluations: usize,
    /// Largest absolute finite-difference gradient over the free parameters
    /// at the returned estimate.
    pub gradient_norm: f64,
    pub polish_iterations: usize,
    /// Inner iterations of the final cold-start mode computation.
    pub pirls_iterations: usize,
    pub pirls_converged: bool,
    pub starts: Vec<StartRecord>,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMode {
    pub item_id: String,
    pub b_hat: f64,
    pub zeta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonMode {
    pub person_id: String,
    pub epsilon_hat: f64,
}

/// Estimates for one model on one dataset. Item and person modes are listed
/// in dense index order (sorted ids), which doubles as the id↔index map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub fixed_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub beta_cov: Vec<Vec<f64>>,
    pub sigma_theta_hat: f64,
    pub sigma_b_hat: f64,
    pub sigma_zeta_hat: f64,
    pub rho_hat: f64,
    /// Covariance parameters on the optimizer scale.
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_persons: usize,
    pub n_items: usize,
    pub eb_items: Vec<ItemMode>,
    pub eb_persons: Vec<PersonMode>,
    /// Items that are all 0 or all 1 within a treatment group.
    pub separated_items: Vec<String>,
    pub data_fingerprint: String,
    pub convergence: Convergence,
}

impl FitResult {
    /// Estimate and standard error of a fixed term.
    pub fn coef(&self, term: &FixedTerm) -> Option<(f64, f64)> {
        let k = self.spec.position(term)?;
        Some((self.beta_hat[k], self.beta_se[k]))
    }

    /// Average treatment effect and its standard error.
    pub fn treatment_effect(&self) -> Option<(f64, f64)> {
        self.coef(&FixedTerm::Treatment)
    }

    pub fn n_params(&self) -> usize {
        self.beta_hat.len() + self.theta.len()
    }
}

/// Fit `spec` to `table`.
pub fn fit(table: &ResponseTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult, ModelError> {
    if spec.fixed.contains(&FixedTerm::Treatment) {
        let records = table.person_records();
        let treated = records.iter().filter(|p| p.treatment == 1).count();
        if treated == 0 || treated == records.len() {
            return Err(ModelError::Spec("both treatment groups must be nonempty".into()));
        }
    }
    let design = build_design(table, spec)?;
    fit_design(&design, opts)
}

fn design_fingerprint(d: &Design) -> String {
    let mut h = Sha256::new();
    for o in 0..d.n_obs() {
        h.update(d.person_ids[d.person[o]].as_bytes());
        h.update([0x1f]);
        h.update(d.item_ids[d.item[o]].as_bytes());
        h.update([0x1f, d.y[o] as u8, d.treatment[o] as u8, b'\n']);
    }
    hex::encode(h.finalize())
}

struct Polished {
    theta: Vec<f64>,
    beta: Vec<f64>,
    hessian_beta: Option<DMatrix<f64>>,
    gradient_norm: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

/// Fit a prepared design.
pub fn fit_design(design: &Design, opts: &FitOptions) -> Result<FitResult, ModelError> {
    let layout = ThetaLayout::for_spec(&design.spec);
    let lower = layout.lower_bounds();
    let mut lap = Laplace::new(design);
    let coarse = PirlsOptions { tol: opts.pirls_tol, max_iter: opts.pirls_max_iter };
    let mut messages = Vec::new();

    let separated = design.separated_items();
    if !separated.is_empty() {
        log::warn!("{} item(s) are all 0 or all 1 within a treatment group", separated.len());
        messages.push(format!("separated items: {}", separated.join(", ")));
    }

    let p = design.n_fixed();
    let mean_y = design.y.iter().sum::<f64>() / design.n_obs() as f64;
    let mut beta0 = vec![0.0; p];
    beta0[0] = (mean_y.clamp(0.01, 0.99) / (1.0 - mean_y.clamp(0.01, 0.99))).ln();

    // Stage 1: simplex over θ with β and v at their joint conditional mode.
    let mut starts = Vec::new();
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut total_evals = 0;
    for sd in opts.start_sds() {
        let mut warm_v: Option<Vec<f64>> = None;
        let mut warm_b = beta0.clone();
        let objective = |theta: &[f64]| -> f64 {
            match lap.modes(theta, &warm_b, warm_v.as_deref(), true, coarse) {
                Ok(m) => {
                    let dev = m.laplace_deviance();
                    warm_v = Some(m.v);
                    warm_b = m.beta;
                    dev
                }
                Err(_) => f64::INFINITY,
            }
        };
        let nm_opts = NelderMeadOptions { ftol: opts.outer_tol, max_evals: opts.max_evals, ..Default::default() };
        let m = nelder_mead(objective, &layout.start(sd), &lower, nm_opts);
        total_evals += m.evals;
        starts.push(StartRecord {
            start_sd: sd,
            objective: m.f,
            iterations: m.iterations,
            evaluations: m.evals,
            converged: m.converged,
        });
        if best.as_ref().is_none_or(|b| m.f < b.1) {
            best = Some((m.x, m.f, m.iterations));
        }
    }
    let (theta_nm, f_nm, nm_iters) = best.expect("at least one start");
    if !f_nm.is_finite() {
        return Err(ModelError::Numerical("objective is not finite at any start".into()));
    }
    let joint = lap.modes(&theta_nm, &beta0, None, true, coarse)?;
    let simplex_converged = starts.iter().any(|s| s.converged);

    let polished = if opts.polish {
        polish(&mut lap, &layout, &theta_nm, &joint.beta, &joint.v, opts)?
    } else {
        let hb = beta_hessian(&mut lap, &theta_nm, &joint.beta, &joint.v, opts.fd_step)?;
        Polished {
            theta: theta_nm.clone(),
            beta: joint.beta.clone(),
            hessian_beta: Some(hb.0),
            gradient_norm: hb.1,
            iterations: 0,
            evaluations: hb.2,
            converged: true,
        }
    };
    total_evals += polished.evaluations;

    // Cold start so that re-running the mode computation at the estimate
    // reproduces the reported modes exactly.
    let modes = lap.modes(&polished.theta, &polished.beta, None, false, fine_opts(opts))?;

    let beta_cov = covariance(&mut lap, &polished, &modes, &mut messages)?;
    let factors = layout.expand(&polished.theta);
    let vc = factors.components();
    let (np, ni) = (design.n_persons(), design.n_items());
    let eb_persons = (0..np)
        .map(|j| PersonMode { person_id: design.person_ids[j].clone(), epsilon_hat: modes.u[j] })
        .collect();
    let eb_items = match design.spec.items {
        ItemEffects::Fixed => Vec::new(),
        items => (0..ni)
            .map(|i| ItemMode {
                item_id: design.item_ids[i].clone(),
                b_hat: modes.u[np + i],
                zeta_hat: if items == ItemEffects::InterceptAndTreatment { modes.u[np + ni + i] } else { 0.0 },
            })
            .collect(),
    };

    let converged = (simplex_converged || polished.converged) && polished.converged && modes.converged;
    if !converged {
        messages.push("optimizer did not meet its convergence criteria".into());
        log::warn!("fit flagged as not converged");
    }
    let beta_se = (0..p).map(|k| beta_cov[(k, k)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        spec: design.spec.clone(),
        fixed_names: design.x_names.clone(),
        beta_hat: polished.beta.clone(),
        beta_se,
        beta_cov: (0..p).map(|r| (0..p).map(|c| beta_cov[(r, c)]).collect()).collect(),
        sigma_theta_hat: vc.sigma_theta,
        sigma_b_hat: vc.sigma_b,
        sigma_zeta_hat: vc.sigma_zeta,
        rho_hat: vc.rho,
        theta: polished.theta.clone(),
        loglik: -0.5 * modes.laplace_deviance(),
        n_obs: design.n_obs(),
        n_persons: np,
        n_items: ni,
        eb_items,
        eb_persons,
        separated_items: separated,
        data_fingerprint: design_fingerprint(design),
        convergence: Convergence {
            converged,
            outer_iterations: nm_iters + polished.iterations,
            function_evaluations: total_evals,
            gradient_norm: polished.gradient_norm,
            polish_iterations: polished.iterations,
            pirls_iterations: modes.iterations,
            pirls_converged: modes.converged,
            starts,
            messages,
        },
    })
}

fn fine_opts(opts: &FitOptions) -> PirlsOptions {
    // Finite differences of the objective need modes far tighter than the
    // search tolerance.
    PirlsOptions { tol: opts.pirls_tol.min(1e-15), max_iter: opts.pirls_max_iter }
}

/// `2 H⁻¹` from the finite-difference Hessian of the Laplace deviance in β,
/// falling back to the profiled Fisher information when that Hessian is
/// not positive definite.
fn covariance(
    lap: &mut Laplace<'_>,
    polished: &Polished,
    modes: &ConditionalModes,
    messages: &mut Vec<String>,
) -> Result<DMatrix<f64>, ModelError> {
    if let Some(h) = &polished.hessian_beta {
        let sym = (h + h.transpose()) * 0.5;
        if let Some(ch) = sym.clone().cholesky() {
            let cov = ch.inverse() * 2.0;
            return Ok((&cov + cov.transpose()) * 0.5);
        }
    }
    messages.push("finite-difference Hessian not positive definite; using profiled information".into());
    let info = lap.fixed_effect_information(&polished.theta, &polished.beta, &modes.v)?;
    let inv = info
        .cholesky()
        .ok_or_else(|| ModelError::Numerical("fixed-effect information is singular".into()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

struct Evaluator<'l, 'd> {
    lap: &'l mut Laplace<'d>,
    n_theta: usize,
    center_v: Vec<f64>,
    opts: PirlsOptions,
    evals: usize,
}

impl Evaluator<'_, '_> {
    fn eval(&mut self, z: &[f64]) -> Result<ConditionalModes, ModelError> {
        self.evals += 1;
        let (theta, beta) = z.split_at(self.n_theta);
        self.lap.modes(theta, beta, Some(&self.center_v), false, self.opts)
    }

    fn f(&mut self, z: &[f64]) -> f64 {
        self.eval(z).map_or(f64::INFINITY, |m| m.laplace_deviance())
    }
}

/// Central-difference gradient and Hessian of the Laplace deviance over the
/// coordinates in `free`.
fn fd_derivatives(ev: &mut Evaluator<'_, '_>, z: &[f64], f0: f64, free: &[usize], h: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = free.len();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    let shifted = |z: &[f64], moves: &[(usize, f64)]| {
        let mut x = z.to_vec();
        for &(k, d) in moves {
            x[k] += d;
        }
        x
    };
    for (a, &k) in free.iter().enumerate() {
        fp[a] = ev.f(&shifted(z, &[(k, h[k])]));
        fm[a] = ev.f(&shifted(z, &[(k, -h[k])]));
    }
    let g = (0..m).map(|a| (fp[a] - fm[a]) / (2.0 * h[free[a]])).collect();
    let mut hess = DMatrix::zeros(m, m);
    for a in 0..m {
        let ha = h[free[a]];
        hess[(a, a)] = (fp[a] - 2.0 * f0 + fm[a]) / (ha * ha);
        for b in 0..a {
            let (ka, kb) = (free[a], free[b]);
            let hb = h[kb];
            let fpp = ev.f(&shifted(z, &[(ka, ha), (kb, hb)]));
            let fmm = ev.f(&shifted(z, &[(ka, -ha), (kb, -hb)]));
            let val = (fpp - fp[a] - fp[b] + 2.0 * f0 - fm[a] - fm[b] + fmm) / (2.0 * ha * hb);
            hess[(a, b)] = val;
            hess[(b, a)] = val;
        }
    }
    (g, hess)
}

/// Projected, Levenberg-damped Newton iterations on the Laplace deviance
/// jointly over `(θ, β)`, with derivatives from central differences.
fn polish(
    lap: &mut Laplace<'_>,
    layout: &ThetaLayout,
    theta0: &[f64],
    beta0: &[f64],
    v0: &[f64],
    opts: &FitOptions,
) -> Result<Polished, ModelError> {
    let nt = layout.len();
    let lower: Vec<f64> = layout.lower_bounds().into_iter().chain(beta0.iter().map(|_| f64::NEG_INFINITY)).collect();
    let mut z: Vec<f64> = theta0.iter().chain(beta0).copied().collect();
    let n = z.len();
    let mut ev = Evaluator { lap, n_theta: nt, center_v: v0.to_vec(), opts: fine_opts(opts), evals: 0 };
    let step_of = |x: f64| opts.fd_step * x.abs().max(1.0);

    let center = ev.eval(&z)?;
    ev.center_v = center.v.clone();
    let mut f0 = center.laplace_deviance();
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    let mut free: Vec<usize>;
    let mut hess;

    loop {
        let h: Vec<f64> = z.iter().map(|&x| step_of(x)).collect();
        // The deviance is a smooth function of the Cholesky entries on both
        // sides of zero, so central differences may straddle a bound.
        let all: Vec<usize> = (0..n).collect();
        let (g_all, h_all) = fd_derivatives(&mut ev, &z, f0, &all, &h);
        // Pin coordinates sitting on a bound whose gradient points outward.
        free = (0..n).filter(|&k| !(z[k] <= lower[k] && g_all[k] >= 0.0)).collect();
        let g: Vec<f64> = free.iter().map(|&k| g_all[k]).collect();
        hess = DMatrix::from_fn(free.len(), free.len(), |r, c| h_all[(free[r], free[c])]);
        grad_norm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if iterations >= opts.polish_max_iter {
            break;
        }

        let gv = nalgebra::DVector::from_column_slice(&g);
        let scale = (0..free.len()).map(|a| hess[(a, a)].abs()).fold(1e-8, f64::max);
        let mut lambda = 0.0;
        let mut accepted = false;
        let mut newton_dec = f64::INFINITY;
        for attempt in 0..12 {
            let damped = &hess + DMatrix::identity(free.len(), free.len()) * lambda;
            let Some(ch) = damped.cholesky() else {
                lambda = if lambda == 0.0 { 1e-6 * scale } else { lambda * 10.0 };
                continue;
            };
            let delta = -ch.solve(&gv);
            let dec = -gv.dot(&delta);
            if attempt == 0 || lambda == 0.0 {
                newton_dec = dec;
            }
            let step_max = delta.iter().zip(&free).fold(0.0f64, |a, (d, &k)| a.max(d.abs() / z[k].abs().max(1.0)));
            if dec < 1e-10 || step_max < 1e-10 {
                converged = true;
                break;
            }
            let mut cand = z.clone();
            for (a, &k) in free.iter().enumerate() {
                cand[k] = (z[k] + delta[a]).max(lower[k]);
            }
            match ev.eval(&cand) {
                Ok(m) if m.laplace_deviance() < f0 => {
                    z = cand;
                    f0 = m.laplace_deviance();
                    ev.center_v = m.v;
                    accepted = true;
                    break;
                }
                _ => lambda = if lambda == 0.0 { 1e-4 * scale } else { lambda * 10.0 },
            }
        }
        if converged {
            break;
        }
        iterations += 1;
        if !accepted {
            // No representable decrease: at the optimum to working precision
            // if the predicted decrease was already negligible.
            converged = newton_dec.is_finite() && newton_dec < 1e-6;
            break;
        }
    }
    let nb = n - nt;
    let hessian_beta = {
        let idx: Vec<usize> = (0..free.len()).filter(|&a| free[a] >= nt).collect();
        (idx.len() == nb).then(|| DMatrix::from_fn(nb, nb, |r, c| hess[(idx[r], idx[c])]))
    };
    Ok(Polished {
        theta: z[..nt].to_vec(),
        beta: z[nt..].to_vec(),
        hessian_beta,
        gradient_norm: grad_norm,
        iterations,
        evaluations: ev.evals,
        converged,
    })
}

/// Hessian of the Laplace deviance in β alone, the largest absolute gradient
/// entry, and the evaluation count.
fn beta_hessian(
    lap: &mut Laplace<'_>,
    theta: &[f64],
    beta: &[f64],
    v: &[f64],
    fd_step: f64,
) -> Result<(DMatrix<f64>, f64, usize), ModelError> {
    let nt = theta.len();
    let opts = PirlsOptions { tol: 1e-15, max_iter: 200 };
    let mut ev = Evaluator { lap, n_theta: nt, center_v: v.to_vec(), opts, evals: 0 };
    let z: Vec<f64> = theta.iter().chain(beta).copied().collect();
    let center = ev.eval(&z)?;
    ev.center_v = center.v.clone();
    let f0 = center.laplace_deviance();
    let h: Vec<f64> = z.iter().map(|&x| fd_step * x.abs().max(1.0)).collect();
    let free: Vec<usize> = (nt..z.len()).collect();
    let (g, hess) = fd_derivatives(&mut ev, &z, f0, &free, &h);
    Ok((hess, g.iter().fold(0.0f64, |a, b| a.max(b.abs())), ev.evals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Response, ResponseTable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rasch(np: usize, ni: usize, effect: f64, seed: u64) -> ResponseTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..ni).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut rows = vec![];
        for p in 0..np {
            let t = (p % 2) as u8;
            let x: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            for (i, bi) in b.iter().enumerate() {
                let eta = effect * f64::from(t) + 0.5 * x + e + bi;
                rows.push(Response {
                    person_id: format!("p{p:03}"),
                    item_id: format!("i{i:02}"),
                    score: u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())),
                    treatment: t,
                    covariate: Some(x),
                    subscale: None,
                    extra: vec![],
                });
            }
        }
        ResponseTable::new(rows, vec![]).unwrap()
    }

    #[test]
    fn small_fit_converges_with_sensible_values() {
        let t = rasch(200, 10, 0.5, 11);
        let r = fit(&t, &ModelSpec::numbered(2).unwrap(), &FitOptions::default()).unwrap();
        assert!(r.convergence.converged, "{:?}", r.convergence);
        assert!((r.sigma_theta_hat - 1.0).abs() < 0.35, "{}", r.sigma_theta_hat);
        assert!(r.beta_se.iter().all(|s| *s > 0.0));
        assert!((r.beta_hat[1] - 0.5).abs() < 3.0 * r.beta_se[1]);
        assert_eq!(r.eb_items.len(), 10);
    }

    #[test]
    fn nested_fit_never_worse() {
        let t = rasch(120, 8, 0.3, 5);
        let o = FitOptions::default();
        let m2 = fit(&t, &ModelSpec::numbered(2).unwrap(), &o).unwrap();
        let m3 = fit(&t, &ModelSpec::numbered(3).unwrap(), &o).unwrap();
        assert!(m3.loglik >= m2.loglik - 1e-4, "{} vs {}", m3.loglik, m2.loglik);
    }
}
