//! Type II (empirical Bayes) estimation: the marginal likelihood cost, its
//! MacKay, EM and reweighted-l1 iterations, and the noiseless reweighted-l1
//! scheme with `eta` weights.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::{factor_sigma, HyperState, Posterior};
use crate::penalty::PenaltyFamily;
use crate::report::SolveReport;
use crate::wl1::{solve_wl1_report, Wl1Mode, Wl1Options, Wl1Problem};

/// After this many consecutive objective increases MacKay hands over to EM.
pub const MACKAY_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    MacKay,
    Em,
    ReweightedL1,
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mackay" => Ok(UpdateRule::MacKay),
            "em" => Ok(UpdateRule::Em),
            "reweighted_l1" | "rwl1" => Ok(UpdateRule::ReweightedL1),
            other => Err(Error::Config(format!("unknown update rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Type2Options {
    pub update_rule: UpdateRule,
    pub max_iters: usize,
    /// Relative objective change.
    pub tol: f64,
    /// Hyperparameters below this are pruned to exactly zero.
    pub prune_threshold: f64,
}

impl Default for Type2Options {
    fn default() -> Self {
        Self { update_rule: UpdateRule::MacKay, max_iters: 500, tol: 1e-9, prune_threshold: 1e-12 }
    }
}

impl Type2Options {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.prune_threshold >= 0.0) {
            return Err(Error::Config(format!("invalid type II options {self:?}")));
        }
        Ok(())
    }
}

fn check_gamma(dict: &Dictionary, gamma: &DVector<f64>) -> Result<()> {
    if gamma.len() != dict.ncols() {
        return Err(Error::Dimension(format!(
            "gamma has length {} but dictionary has {} columns",
            gamma.len(),
            dict.ncols()
        )));
    }
    Ok(())
}

fn cost_from_parts(fit: f64, logdet: f64, pen: &PenaltyFamily, gamma: &DVector<f64>) -> f64 {
    fit + logdet + gamma.iter().map(|&g| pen.f(g)).sum::<f64>()
}

/// `y^T Sigma_y^{-1} y + ln|Sigma_y| + sum_i f(gamma_i)`.
pub fn type2_objective(dict: &Dictionary, pen: &PenaltyFamily, hyp: &HyperState, y: &DVector<f64>) -> Result<f64> {
    check_gamma(dict, &hyp.gamma)?;
    dict.check_signal(y)?;
    let factor = factor_sigma(dict.matrix(), &hyp.gamma, hyp.lambda)?;
    let fit = y.dot(&factor.solve(y));
    Ok(cost_from_parts(fit, factor.logdet(), pen, &hyp.gamma))
}

fn mackay_step(post: &Posterior, gamma: &DVector<f64>, prune: f64) -> DVector<f64> {
    DVector::from_fn(gamma.len(), |i, _| {
        let g = gamma[i];
        if g <= 0.0 {
            return 0.0;
        }
        // 1 - S_ii / gamma_i, computed without cancellation
        let keep = g * post.z[i];
        if !(keep > 0.0) {
            return 0.0;
        }
        let next = post.mean[i] * post.mean[i] / keep;
        if next < prune {
            0.0
        } else {
            next
        }
    })
}

fn em_step(pen: &PenaltyFamily, post: &Posterior, gamma: &DVector<f64>, prune: f64) -> DVector<f64> {
    DVector::from_fn(gamma.len(), |i, _| {
        if gamma[i] <= 0.0 {
            return 0.0;
        }
        let next = pen.optimal_gamma(post.mean[i] * post.mean[i] + post.s_diag[i].max(0.0));
        if next < prune {
            0.0
        } else {
            next
        }
    })
}

/// One MacKay fixed-point step `gamma_i <- mu_i^2 / (1 - S_ii / gamma_i)` for the
/// flat hyperprior. Pruned coordinates stay at zero.
pub fn mackay_update(dict: &Dictionary, hyp: &HyperState, y: &DVector<f64>) -> Result<DVector<f64>> {
    mackay_update_with(dict, hyp, y, Type2Options::default().prune_threshold)
}

pub fn mackay_update_with(dict: &Dictionary, hyp: &HyperState, y: &DVector<f64>, prune: f64) -> Result<DVector<f64>> {
    if !(hyp.lambda > 0.0) {
        return Err(Error::Config("MacKay update requires lambda > 0".into()));
    }
    check_gamma(dict, &hyp.gamma)?;
    dict.check_signal(y)?;
    let post = Posterior::compute(dict.matrix(), &hyp.gamma, hyp.lambda, y)?;
    Ok(mackay_step(&post, &hyp.gamma, prune))
}

/// One EM step `gamma_i <- 1 / h'(mu_i^2 + S_ii)` (`mu_i^2 + S_ii` for the flat
/// hyperprior). Never increases [`type2_objective`].
pub fn em_update(dict: &Dictionary, pen: &PenaltyFamily, hyp: &HyperState, y: &DVector<f64>) -> Result<DVector<f64>> {
    if !(hyp.lambda > 0.0) {
        return Err(Error::Config("EM update requires lambda > 0".into()));
    }
    check_gamma(dict, &hyp.gamma)?;
    dict.check_signal(y)?;
    let post = Posterior::compute(dict.matrix(), &hyp.gamma, hyp.lambda, y)?;
    Ok(em_step(pen, &post, &hyp.gamma, Type2Options::default().prune_threshold))
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (prev - next).abs() / prev.abs().max(next.abs()).max(1.0)
}

pub fn solve_type2(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    lambda: f64,
    y: &DVector<f64>,
    opts: &Type2Options,
) -> Result<SolveReport> {
    let start = Instant::now();
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("type II solver requires lambda > 0, got {lambda}")));
    }
    pen.validate()?;
    opts.validate()?;
    dict.check_signal(y)?;
    if opts.update_rule != UpdateRule::Em && !pen.is_ard() {
        return Err(Error::Config(format!(
            "update rule {:?} requires the flat (ARD) hyperprior; use EM for {pen}",
            opts.update_rule
        )));
    }
    let mut report = match opts.update_rule {
        UpdateRule::MacKay | UpdateRule::Em => fixed_point_loop(dict, pen, lambda, y, opts)?,
        UpdateRule::ReweightedL1 => reweighted_l1_loop(dict, lambda, y, opts)?,
    };
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

fn fixed_point_loop(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    lambda: f64,
    y: &DVector<f64>,
    opts: &Type2Options,
) -> Result<SolveReport> {
    let phi = dict.matrix();
    let mut gamma = DVector::from_element(dict.ncols(), 1.0);
    if y.iter().all(|&v| v == 0.0) && !matches!(pen, PenaltyFamily::Gaussian) {
        gamma.fill(0.0);
    }
    let mut post = Posterior::compute(phi, &gamma, lambda, y)?;
    let mut value = cost_from_parts(post.fit, post.factor.logdet(), pen, &gamma);
    let mut trace = vec![value];
    let mut use_em = opts.update_rule == UpdateRule::Em;
    let mut rises = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let next = if use_em {
            em_step(pen, &post, &gamma, opts.prune_threshold)
        } else {
            mackay_step(&post, &gamma, opts.prune_threshold)
        };
        gamma = next;
        post = Posterior::compute(phi, &gamma, lambda, y)?;
        let next_value = cost_from_parts(post.fit, post.factor.logdet(), pen, &gamma);
        if next_value > value {
            rises += 1;
            if !use_em && rises >= MACKAY_PATIENCE {
                log::debug!("MacKay objective rose {rises} times in a row; switching to EM");
                use_em = true;
            }
        } else {
            rises = 0;
        }
        let change = relative_change(value, next_value);
        value = next_value;
        trace.push(value);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let x_hat = crate::model::posterior_mean_raw(phi, &gamma, lambda, y)?;
    Ok(SolveReport { x_hat, gamma_hat: gamma, objective_trace: trace, iterations, converged, wall_time: 0.0 })
}

/// Bound `||y - Phi x||^2 + lambda (sum x^2/gamma + ln|lambda I + Phi Gamma Phi^T|)`,
/// minimized jointly over `(x, gamma)` by alternating a weighted lasso with the
/// closed-form `gamma_i = |x_i| / sqrt(z_i)`.
fn joint_bound(phi: &DMatrix<f64>, lambda: f64, y: &DVector<f64>, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    let c: Vec<f64> = x.iter().map(|v| v * v).collect();
    let logdet = factor_sigma(phi, gamma, lambda)?.logdet();
    Ok((y - phi * x).norm_squared() + lambda * (crate::gpenalty::ratio_sum(&c, gamma) + logdet))
}

fn reweighted_l1_loop(dict: &Dictionary, lambda: f64, y: &DVector<f64>, opts: &Type2Options) -> Result<SolveReport> {
    let phi = dict.matrix();
    let m = dict.ncols();
    let mut gamma = DVector::from_element(m, 1.0);
    let mut x = crate::model::posterior_mean_raw(phi, &gamma, lambda, y)?;
    let mut value = joint_bound(phi, lambda, y, &x, &gamma)?;
    let mut trace = vec![value];
    let wl1_opts = Wl1Options::default();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let post = Posterior::compute(phi, &gamma, lambda, y)?;
        let weights = post.z.map(|z| 2.0 * z.max(f64::MIN_POSITIVE).sqrt());
        let prob = Wl1Problem::new(dict, y, weights, Wl1Mode::Penalized { lambda })?;
        let sol = solve_wl1_report(&prob, &wl1_opts, Some(&x))?;
        x = sol.x;
        gamma = DVector::from_fn(m, |i, _| {
            let g = x[i].abs() / post.z[i].max(f64::MIN_POSITIVE).sqrt();
            if g < opts.prune_threshold {
                0.0
            } else {
                g
            }
        });
        let next = joint_bound(phi, lambda, y, &x, &gamma)?;
        let change = relative_change(value, next);
        value = next;
        trace.push(value);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let x_hat = crate::model::posterior_mean_raw(phi, &gamma, lambda, y)?;
    Ok(SolveReport { x_hat, gamma_hat: gamma, objective_trace: trace, iterations, converged, wall_time: 0.0 })
}

/// `eta_i = [phi_i^T (alpha I + Phi diag(x^2) Phi^T)^{-1} phi_i]^q`. With
/// `alpha = 0` the inverse is a pseudo-inverse.
pub fn eta_weights(dict: &Dictionary, x: &DVector<f64>, alpha: f64, q: f64) -> Result<DVector<f64>> {
    dict.check_coefficients(x)?;
    if !(alpha >= 0.0) || !(q > 0.0) {
        return Err(Error::Config(format!("eta weights need alpha >= 0 and q > 0, got alpha={alpha}, q={q}")));
    }
    let phi = dict.matrix();
    let m_mat = crate::model::sigma_matrix(phi, &x.map(|v| v * v), alpha);
    let eig = SymmetricEigen::new(m_mat);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = if alpha > 0.0 { 0.0 } else { 1e-12 * top };
    if !(top > 0.0) {
        return Err(Error::SingularSystem("alpha = 0 and x = 0 leave eta undefined".into()));
    }
    // phi_i^T Q diag(1/l) Q^T phi_i
    let proj = eig.eigenvectors.transpose() * phi;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 })
        .collect();
    let eta = DVector::from_fn(dict.ncols(), |i, _| {
        let s: f64 = proj.column(i).iter().zip(&inv).map(|(p, w)| p * p * w).sum();
        s.powf(q)
    });
    if alpha == 0.0 && eta.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::SingularSystem("pseudo-inverse leaves a column with zero weight".into()));
    }
    Ok(eta)
}

/// Geometric schedule `alpha_k = max(alpha_min, alpha0 rho^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSchedule {
    /// `None` uses `1e-2 ||y||^2 / n`.
    pub alpha0: Option<f64>,
    pub rho: f64,
    pub alpha_min: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self { alpha0: None, rho: 0.1, alpha_min: 1e-10 }
    }
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok0 = self.alpha0.is_none_or(|a| a > 0.0);
        if !ok0 || !(self.rho > 0.0 && self.rho < 1.0) || !(self.alpha_min > 0.0) {
            return Err(Error::Config(format!("invalid alpha schedule {self:?}")));
        }
        Ok(())
    }

    pub fn alpha(&self, y: &DVector<f64>, k: usize) -> f64 {
        let a0 = self.alpha0.unwrap_or_else(|| 1e-2 * y.norm_squared() / y.len() as f64);
        (a0 * self.rho.powi(k as i32)).max(self.alpha_min)
    }
}

/// Support of `x`: entries above `1e-8 * max |x|`.
pub(crate) fn support_of(x: &DVector<f64>) -> Vec<usize> {
    let max = x.amax();
    (0..x.len()).filter(|&i| max > 0.0 && x[i].abs() > 1e-8 * max).collect()
}

/// Noiseless Type II by reweighted l1: `x <- argmin sum w_i |x_i| s.t. y = Phi x`,
/// starting from `w = 1`, then `w <- eta(x; alpha_k, q)`. `gamma_hat` holds
/// `|x_i| / w_i`.
pub fn solve_type2_noiseless(
    dict: &Dictionary,
    y: &DVector<f64>,
    schedule: &AlphaSchedule,
    q: f64,
    opts: &Type2Options,
) -> Result<SolveReport> {
    let start = Instant::now();
    schedule.validate()?;
    opts.validate()?;
    dict.check_signal(y)?;
    if !(q > 0.0) {
        return Err(Error::Config(format!("q must be positive, got {q}")));
    }
    let m = dict.ncols();
    let wl1_opts = Wl1Options::default();
    let solve = |w: DVector<f64>, warm: Option<&DVector<f64>>| -> Result<DVector<f64>> {
        let prob = Wl1Problem::new(dict, y, w, Wl1Mode::Equality)?;
        let sol = solve_wl1_report(&prob, &wl1_opts, warm)?;
        if !sol.converged {
            log::warn!("weighted l1 step stopped with gap {:e}", sol.duality_gap);
        }
        Ok(sol.x)
    };
    let mut w = DVector::from_element(m, 1.0);
    let mut x = solve(w.clone(), None)?;
    let mut trace = vec![x.iter().map(|v| v.abs()).sum::<f64>()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let alpha = schedule.alpha(y, iterations);
        iterations += 1;
        w = eta_weights(dict, &x, alpha, q)?;
        let next = solve(w.clone(), Some(&x))?;
        trace.push(w.iter().zip(next.iter()).map(|(wi, xi)| wi * xi.abs()).sum());
        let change = (&next - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        let same_support = support_of(&next) == support_of(&x);
        x = next;
        if same_support && change < opts.tol.max(1e-9) && alpha <= schedule.alpha_min {
            converged = true;
            break;
        }
    }
    let gamma_hat = DVector::from_fn(m, |i, _| x[i].abs() / w[i]);
    Ok(SolveReport {
        x_hat: x,
        gamma_hat,
        objective_trace: trace,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
