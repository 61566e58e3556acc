//! Conditional modes of the random effects and the Laplace approximation.
//!
//! Random effects are written as `u = Λ v` with spherical `v ~ N(0, I)`. For
//! fixed `θ` the penalized deviance
//!
//! ```text
//! pdev(v, β) = -2 Σ log p(y | η) + |v|²,   η = Xβ + Z Λ v
//! ```
//!
//! is minimized by Newton steps with step halving. With `A = ZΛ` and
//! `M = A'WA + I`, the Laplace approximation is `-2 log L ≈ pdev + log |M|`
//! evaluated at the mode.

use nalgebra::{DMatrix, DVector};

use super::{Design, Factors, ModelError, ThetaLayout};
use crate::sparse::{minimum_degree, NumericCholesky, SymbolicCholesky, SymmetricPattern};

/// Linear predictors are clamped to `±ETA_CAP` before evaluating the logistic.
pub const ETA_CAP: f64 = 30.0;

const NONE: usize = usize::MAX;

/// Stopping rule for the inner Newton iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PirlsOptions {
    /// Converged when the Newton decrement (the predicted deviance reduction)
    /// falls below `tol · max(1, |pdev|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PirlsOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// Result of one inner optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModes {
    /// Spherical modes `v`.
    pub v: Vec<f64>,
    /// Modes on the original scale, `u = Λ v`, in random-effect column order.
    pub u: Vec<f64>,
    pub beta: Vec<f64>,
    pub pdev: f64,
    /// `log |M|` at the mode.
    pub log_det: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ConditionalModes {
    /// Laplace approximation to `-2 log L`.
    pub fn laplace_deviance(&self) -> f64 {
        self.pdev + self.log_det
    }
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.c
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `-2 log p(y | η)` for a Bernoulli-logit observation.
#[inline]
fn unit_deviance(y: f64, eta: f64) -> f64 {
    2.0 * if y > 0.5 { softplus(-eta) } else { softplus(eta) }
}

/// Reusable symbolic analysis and work arrays for one design.
pub struct Laplace<'a> {
    design: &'a Design,
    layout: ThetaLayout,
    sym: SymbolicCholesky,
    num: NumericCholesky,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
    obs_pos: Vec<[usize; 6]>,
    eta: Vec<f64>,
    w: Vec<f64>,
    resid: Vec<f64>,
    xb: Vec<f64>,
}

impl<'a> Laplace<'a> {
    pub fn new(design: &'a Design) -> Self {
        let (np, ni) = (design.n_persons(), design.n_items());
        let blocks = design.item_blocks();
        let q = design.n_random();
        let mut edges = Vec::with_capacity(design.n_obs() * 3);
        for o in 0..design.n_obs() {
            let (p, i) = (design.person[o], design.item[o]);
            if blocks >= 1 {
                edges.push((p, np + i));
            }
            if blocks == 2 && design.treatment[o] != 0.0 {
                edges.push((p, np + ni + i));
                edges.push((np + i, np + ni + i));
            }
        }
        let pattern = SymmetricPattern::from_edges(q, edges);
        let sym = SymbolicCholesky::analyze(&pattern, minimum_degree(&pattern));
        let pos = |a: usize, b: usize| sym.position(a, b).expect("entry in pattern");
        let diag_pos = (0..q).map(|c| pos(c, c)).collect();
        let obs_pos = (0..design.n_obs())
            .map(|o| {
                let (p, i) = (design.person[o], design.item[o]);
                let mut e = [NONE; 6];
                e[0] = pos(p, p);
                if blocks >= 1 {
                    let b = np + i;
                    e[1] = pos(p, b);
                    e[2] = pos(b, b);
                    if blocks == 2 && design.treatment[o] != 0.0 {
                        let z = np + ni + i;
                        e[3] = pos(p, z);
                        e[4] = pos(b, z);
                        e[5] = pos(z, z);
                    }
                }
                e
            })
            .collect();
        let n = design.n_obs();
        Self {
            design,
            layout: ThetaLayout::for_spec(&design.spec),
            num: NumericCholesky::new(&sym),
            values: vec![0.0; sym.input_len()],
            sym,
            diag_pos,
            obs_pos,
            eta: vec![0.0; n],
            w: vec![0.0; n],
            resid: vec![0.0; n],
            xb: vec![0.0; n],
        }
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    /// Entries of row `o` of `A = ZΛ`: (person, item intercept, item slope).
    #[inline]
    fn a_row(&self, f: &Factors, o: usize) -> (f64, f64, f64) {
        let t = self.design.treatment[o];
        (f.sigma_theta, f.l11 + t * f.l21, t * f.l22)
    }

    fn columns(&self, o: usize) -> (usize, usize, usize) {
        let d = self.design;
        let (np, ni) = (d.n_persons(), d.n_items());
        (d.person[o], np + d.item[o], np + ni + d.item[o])
    }

    fn compute_xb(&mut self, beta: &[f64]) {
        let d = self.design;
        let p = d.n_fixed();
        for o in 0..d.n_obs() {
            let row = &d.x_rows[o * p..(o + 1) * p];
            self.xb[o] = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        }
    }

    /// Fill `self.eta` from `self.xb` and `v`; returns `pdev`.
    fn eta_and_pdev(&mut self, f: &Factors, v: &[f64]) -> f64 {
        let blocks = self.design.item_blocks();
        let mut dev = Neumaier::default();
        for o in 0..self.design.n_obs() {
            let (a_p, a_b, a_z) = self.a_row(f, o);
            let (cp, cb, cz) = self.columns(o);
            let mut e = self.xb[o] + a_p * v[cp];
            if blocks >= 1 {
                e += a_b * v[cb];
            }
            if blocks == 2 && a_z != 0.0 {
                e += a_z * v[cz];
            }
            let e = e.clamp(-ETA_CAP, ETA_CAP);
            self.eta[o] = e;
            dev.add(unit_deviance(self.design.y[o], e));
        }
        for &x in v {
            dev.add(x * x);
        }
        dev.total()
    }

    /// Assemble `M = A'WA + I` at the current `eta` and factor it.
    fn factor(&mut self, f: &Factors) -> Result<(), ModelError> {
        self.values.iter_mut().for_each(|x| *x = 0.0);
        for &c in &self.diag_pos {
            self.values[c] = 1.0;
        }
        for o in 0..self.design.n_obs() {
            let mu = 1.0 / (1.0 + (-self.eta[o]).exp());
            let w = mu * (1.0 - mu);
            self.w[o] = w;
            self.resid[o] = self.design.y[o] - mu;
            let (a_p, a_b, a_z) = self.a_row(f, o);
            let pos = self.obs_pos[o];
            self.values[pos[0]] += w * a_p * a_p;
            if pos[1] != NONE {
                self.values[pos[1]] += w * a_p * a_b;
                self.values[pos[2]] += w * a_b * a_b;
            }
            if pos[3] != NONE {
                self.values[pos[3]] += w * a_p * a_z;
                self.values[pos[4]] += w * a_b * a_z;
                self.values[pos[5]] += w * a_z * a_z;
            }
        }
        self.num
            .factor(&self.sym, &self.values)
            .map_err(|e| ModelError::Numerical(format!("random-effect system: {e}")))
    }

    /// `A' r` accumulated into `out` (original column order).
    fn a_transpose(&self, f: &Factors, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let blocks = self.design.item_blocks();
        for o in 0..self.design.n_obs() {
            let (a_p, a_b, a_z) = self.a_row(f, o);
            let (cp, cb, cz) = self.columns(o);
            out[cp] += a_p * r[o];
            if blocks >= 1 {
                out[cb] += a_b * r[o];
            }
            if blocks == 2 && a_z != 0.0 {
                out[cz] += a_z * r[o];
            }
        }
    }

    fn permute(&self, x: &[f64]) -> Vec<f64> {
        let perm = self.sym.permutation();
        (0..x.len()).map(|k| x[perm.old(k)]).collect()
    }

    fn unpermute(&self, y: &[f64]) -> Vec<f64> {
        let perm = self.sym.permutation();
        let mut x = vec![0.0; y.len()];
        for (k, &val) in y.iter().enumerate() {
            x[perm.old(k)] = val;
        }
        x
    }

    /// Newton direction for `v` only, or jointly for `(v, β)`.
    fn direction(&mut self, f: &Factors, v: &[f64], joint: bool) -> Result<(Vec<f64>, Vec<f64>, f64), ModelError> {
        let q = v.len();
        let mut r_v = vec![0.0; q];
        self.a_transpose(f, &self.resid, &mut r_v);
        for (r, x) in r_v.iter_mut().zip(v) {
            *r -= x;
        }
        let mut c_v = self.permute(&r_v);
        self.num.forward(&self.sym, &mut c_v);

        if !joint {
            self.num.backward(&self.sym, &mut c_v);
            let dv = self.unpermute(&c_v);
            let dec = r_v.iter().zip(&dv).map(|(a, b)| a * b).sum();
            return Ok((dv, Vec::new(), dec));
        }

        let (rzx, schur, r_beta) = self.fixed_blocks(f, q);
        let p = rzx.len();
        let chol = schur
            .cholesky()
            .ok_or_else(|| ModelError::Numerical("fixed-effect system is singular (collinear terms?)".into()))?;
        let mut rhs = r_beta.clone();
        for c in 0..p {
            rhs[c] -= rzx[c].iter().zip(&c_v).map(|(a, b)| a * b).sum::<f64>();
        }
        let db = chol.solve(&rhs);
        for c in 0..p {
            for (t, z) in c_v.iter_mut().zip(&rzx[c]) {
                *t -= z * db[c];
            }
        }
        self.num.backward(&self.sym, &mut c_v);
        let dv = self.unpermute(&c_v);
        let dec = r_v.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>() + r_beta.dot(&db);
        Ok((dv, db.iter().copied().collect(), dec))
    }

    /// `RZX = L⁻¹ P A'WX` (one column per fixed effect), the Schur complement
    /// `X'WX - RZX'RZX`, and `X'(y - μ)`, at the last factorization.
    fn fixed_blocks(&self, f: &Factors, q: usize) -> (Vec<Vec<f64>>, DMatrix<f64>, DVector<f64>) {
        let d = self.design;
        let p = d.n_fixed();
        let blocks = d.item_blocks();
        let mut awx = vec![vec![0.0; q]; p];
        let mut xwx = DMatrix::<f64>::zeros(p, p);
        let mut r_beta = DVector::<f64>::zeros(p);
        for o in 0..d.n_obs() {
            let w = self.w[o];
            let (a_p, a_b, a_z) = self.a_row(f, o);
            let (cp, cb, cz) = self.columns(o);
            let xr = d.x_row(o);
            for c in 0..p {
                let wx = w * xr[c];
                let col = &mut awx[c];
                col[cp] += a_p * wx;
                if blocks >= 1 {
                    col[cb] += a_b * wx;
                }
                if blocks == 2 && a_z != 0.0 {
                    col[cz] += a_z * wx;
                }
                r_beta[c] += xr[c] * self.resid[o];
                for k in 0..=c {
                    xwx[(c, k)] += wx * xr[k];
                }
            }
        }
        let rzx: Vec<Vec<f64>> = awx
            .iter()
            .map(|col| {
                let mut z = self.permute(col);
                self.num.forward(&self.sym, &mut z);
                z
            })
            .collect();
        let mut schur = DMatrix::<f64>::zeros(p, p);
        for c in 0..p {
            for k in 0..=c {
                let dot: f64 = rzx[c].iter().zip(&rzx[k]).map(|(a, b)| a * b).sum();
                let val = xwx[(c, k)] - dot;
                schur[(c, k)] = val;
                schur[(k, c)] = val;
            }
        }
        (rzx, schur, r_beta)
    }

    /// Information for `β` with the random effects profiled out at fixed
    /// weights: `X'WX - X'WA M⁻¹ A'WX`, evaluated at `(θ, β, v)`.
    pub fn fixed_effect_information(&mut self, theta: &[f64], beta: &[f64], v: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let f = self.layout.expand(theta);
        self.compute_xb(beta);
        self.eta_and_pdev(&f, v);
        self.factor(&f)?;
        Ok(self.fixed_blocks(&f, v.len()).1)
    }

    /// Penalized deviance at an arbitrary `(θ, β, v)`.
    pub fn penalized_deviance(&mut self, theta: &[f64], beta: &[f64], v: &[f64]) -> f64 {
        let f = self.layout.expand(theta);
        self.compute_xb(beta);
        self.eta_and_pdev(&f, v)
    }

    /// Minimize `pdev` over `v` (and over `β` too when `joint`), starting
    /// from `v0` (zeros when `None`).
    pub fn modes(
        &mut self,
        theta: &[f64],
        beta: &[f64],
        v0: Option<&[f64]>,
        joint: bool,
        opts: PirlsOptions,
    ) -> Result<ConditionalModes, ModelError> {
        let q = self.design.n_random();
        let f = self.layout.expand(theta);
        let mut v = v0.map_or_else(|| vec![0.0; q], <[f64]>::to_vec);
        let mut beta = beta.to_vec();
        if beta.iter().chain(&v).chain(theta).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { context: "PIRLS start".into(), iterate: [theta, &beta].concat() });
        }
        self.compute_xb(&beta);
        let mut pdev = self.eta_and_pdev(&f, &v);
        let mut converged = false;
        let mut iterations = 0;
        let mut factored_here = false;

        while iterations < opts.max_iter {
            self.factor(&f)?;
            factored_here = true;
            let (dv, db, dec) = self.direction(&f, &v, joint)?;
            if !dec.is_finite() {
                return Err(ModelError::NonFinite { context: "PIRLS step".into(), iterate: [theta, &beta].concat() });
            }
            if dec <= opts.tol * pdev.abs().max(1.0) {
                converged = true;
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand_v: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + step * b).collect();
                let cand_b: Vec<f64> = if joint {
                    beta.iter().zip(&db).map(|(a, b)| a + step * b).collect()
                } else {
                    beta.clone()
                };
                if joint {
                    self.compute_xb(&cand_b);
                }
                let cand = self.eta_and_pdev(&f, &cand_v);
                if cand <= pdev {
                    v = cand_v;
                    beta = cand_b;
                    pdev = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                // No decrease is representable; the point is a mode to
                // working precision. Restore eta at the current point.
                self.compute_xb(&beta);
                pdev = self.eta_and_pdev(&f, &v);
                converged = dec <= 1e-6 * pdev.abs().max(1.0);
                break;
            }
            factored_here = false;
        }
        if converged {
            // The log-determinant depends to first order on the mode, so one
            // unconditional Newton step (error squared in the quadratic
            // region) makes the Laplace deviance smooth in its arguments.
            if !factored_here {
                self.factor(&f)?;
            }
            let (dv, db, dec) = self.direction(&f, &v, joint)?;
            if dec.is_finite() {
                for (a, b) in v.iter_mut().zip(&dv) {
                    *a += b;
                }
                if joint {
                    for (a, b) in beta.iter_mut().zip(&db) {
                        *a += b;
                    }
                }
                self.compute_xb(&beta);
                pdev = self.eta_and_pdev(&f, &v);
                factored_here = false;
            }
        }
        if !factored_here {
            self.factor(&f)?;
        }
        let log_det = self.num.log_det(&self.sym);
        if !pdev.is_finite() || !log_det.is_finite() {
            return Err(ModelError::NonFinite { context: "Laplace deviance".into(), iterate: [theta, &beta].concat() });
        }
        let u = self.scale_modes(&f, &v);
        Ok(ConditionalModes { v, u, beta, pdev, log_det, iterations, converged })
    }

    /// `u = Λ v` in random-effect column order.
    fn scale_modes(&self, f: &Factors, v: &[f64]) -> Vec<f64> {
        let (np, ni) = (self.design.n_persons(), self.design.n_items());
        let mut u = vec![0.0; v.len()];
        for p in 0..np {
            u[p] = f.sigma_theta * v[p];
        }
        match self.design.item_blocks() {
            0 => {}
            1 => {
                for i in 0..ni {
                    u[np + i] = f.l11 * v[np + i];
                }
            }
            _ => {
                for i in 0..ni {
                    let (vb, vz) = (v[np + i], v[np + ni + i]);
                    u[np + i] = f.l11 * vb;
                    u[np + ni + i] = f.l21 * vb + f.l22 * vz;
                }
            }
        }
        u
    }
}

/// Conditional modes of the random effects at fixed `(β, θ)`, from a cold start.
pub fn pirls_conditional_modes(
    design: &Design,
    beta: &[f64],
    theta: &[f64],
    opts: PirlsOptions,
) -> Result<ConditionalModes, ModelError> {
    check_dims(design, beta, theta)?;
    Laplace::new(design).modes(theta, beta, None, false, opts)
}

/// Laplace-approximate log-likelihood at `(β, θ)`.
pub fn laplace_loglik(design: &Design, beta: &[f64], theta: &[f64]) -> Result<f64, ModelError> {
    let opts = PirlsOptions { tol: 1e-14, max_iter: 200 };
    Ok(-0.5 * pirls_conditional_modes(design, beta, theta, opts)?.laplace_deviance())
}

fn check_dims(design: &Design, beta: &[f64], theta: &[f64]) -> Result<(), ModelError> {
    let layout = ThetaLayout::for_spec(&design.spec);
    if beta.len() != design.n_fixed() || theta.len() != layout.len() {
        return Err(ModelError::Spec(format!(
            "expected {} fixed effects and {} covariance parameters, got {} and {}",
            design.n_fixed(),
            layout.len(),
            beta.len(),
            theta.len()
        )));
    }
    if theta.iter().zip(layout.lower_bounds()).any(|(t, lb)| *t < lb) {
        return Err(ModelError::Spec("covariance parameters violate their lower bounds".into()));
    }
    Ok(())
}
