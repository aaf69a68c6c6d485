//! Sparse logistic classification with the Type II penalty.
//!
//! The data term is the Bernoulli negative log-likelihood
//! `nll(x) = sum_j ln(1 + e^{t_j}) - y_j t_j`, `t = Phi x`. Its Hessian is
//! bounded by `Phi^T Phi / 4`, which gives the quadratic majorizer
//! [`pi_bound`]; combined with the variational form of `g_II` every step of
//! [`fit_type2_classifier`] is an exact minimization of an upper bound.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpenalty::{ratio_sum, GammaProblem};
use crate::model::{factor_sigma, posterior_mean_raw, Posterior};
use crate::penalty::PenaltyFamily;
use crate::report::SolveReport;

/// Hyperparameters at or below this fraction of the largest, or below
/// [`PRUNE_ABS`], are pruned to exactly zero.
pub const PRUNE_REL: f64 = 1e-10;
pub const PRUNE_ABS: f64 = 1e-10;

/// Rows `phi_j` (one per example) and 0/1 labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDesign {
    pub phi: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl LabeledDesign {
    pub fn new(phi: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if phi.nrows() != labels.len() {
            return Err(Error::Dimension(format!("{} rows but {} labels", phi.nrows(), labels.len())));
        }
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::Dimension("empty design".into()));
        }
        if let Some(j) = labels.iter().position(|&l| l != 0.0 && l != 1.0) {
            return Err(Error::Config(format!("label {} at row {j} is not 0 or 1", labels[j])));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("design contains non-finite values".into()));
        }
        Ok(Self { phi, labels })
    }

    pub fn nrows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.phi.ncols()
    }

    /// Training requires at least one example of each class.
    pub fn check_trainable(&self) -> Result<()> {
        let ones = self.labels.iter().filter(|&&l| l == 1.0).count();
        if ones == 0 || ones == self.labels.len() {
            return Err(Error::Config("training data must contain both classes".into()));
        }
        Ok(())
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ncols() {
            return Err(Error::Dimension(format!("{} coefficients for {} features", x.len(), self.ncols())));
        }
        Ok(())
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn nll_scores(labels: &DVector<f64>, t: &DVector<f64>) -> f64 {
    t.iter().zip(labels.iter()).map(|(&t, &y)| softplus(t) - y * t).sum()
}

/// Negative Bernoulli log-likelihood; `n ln 2` at `x = 0`.
pub fn nll(design: &LabeledDesign, x: &DVector<f64>) -> f64 {
    nll_scores(&design.labels, &(&design.phi * x))
}

/// `Phi^T (sigma(Phi x) - y)`.
pub fn nll_gradient(design: &LabeledDesign, x: &DVector<f64>) -> DVector<f64> {
    let t = &design.phi * x;
    let r = DVector::from_fn(t.len(), |j, _| sigmoid(t[j]) - design.labels[j]);
    design.phi.transpose() * r
}

/// `nll(v) + (x - v)^T grad nll(v) + ||Phi (x - v)||^2 / 8`, an upper bound on
/// `nll(x)` that is tight at `x = v`.
pub fn pi_bound(design: &LabeledDesign, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let d = x - v;
    nll(design, v) + d.dot(&nll_gradient(design, v)) + 0.125 * (&design.phi * &d).norm_squared()
}

/// Homotopy for the approximate-l0 objective: stage `k` uses
/// `alpha = max(floor, start * rho^k)` for `k < stages`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaHomotopy {
    pub alpha1_start: f64,
    pub alpha2_start: f64,
    pub alpha1_floor: f64,
    pub alpha2_floor: f64,
    pub rho: f64,
    pub stages: usize,
}

impl Default for AlphaHomotopy {
    fn default() -> Self {
        Self { alpha1_start: 1.0, alpha2_start: 1.0, alpha1_floor: 1e-6, alpha2_floor: 1e-6, rho: 0.3, stages: 8 }
    }
}

impl AlphaHomotopy {
    /// A single stage at fixed `(alpha1, alpha2)`.
    pub fn fixed(alpha1: f64, alpha2: f64) -> Self {
        Self { alpha1_start: alpha1, alpha2_start: alpha2, alpha1_floor: alpha1, alpha2_floor: alpha2, rho: 0.5, stages: 1 }
    }

    pub fn schedule(&self) -> Vec<(f64, f64)> {
        (0..self.stages)
            .map(|k| {
                let r = self.rho.powi(k as i32);
                ((self.alpha1_start * r).max(self.alpha1_floor), (self.alpha2_start * r).max(self.alpha2_floor))
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let pos = [self.alpha1_start, self.alpha2_start, self.alpha1_floor, self.alpha2_floor];
        if pos.iter().any(|a| !(*a > 0.0)) || !(self.rho > 0.0 && self.rho <= 1.0) || self.stages == 0 {
            return Err(Error::Config(format!("invalid alpha homotopy {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierOptions {
    /// Trade-off for the Type II penalized fit; 4 is the value with a
    /// marginal-likelihood interpretation.
    pub lambda: f64,
    pub homotopy: AlphaHomotopy,
    pub max_outer: usize,
    /// Relative objective change.
    pub tol: f64,
    /// Largest coefficient change, relative to `1 + ||x||_inf`; both this and
    /// `tol` must hold.
    pub x_tol: f64,
    /// Coordinate sweeps per inner weighted-l1 logistic solve.
    pub max_inner: usize,
    pub inner_tol: f64,
    /// Optional starting coefficients (approximate-l0 fit); `gamma` starts at `|x_init|`.
    pub x_init: Option<Vec<f64>>,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            lambda: 4.0,
            homotopy: AlphaHomotopy::default(),
            max_outer: 2000,
            tol: 1e-10,
            x_tol: 1e-9,
            max_inner: 5000,
            inner_tol: 1e-12,
            x_init: None,
        }
    }
}

impl ClassifierOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.max_outer == 0 || !(self.tol > 0.0) || !(self.x_tol > 0.0) || self.max_inner == 0 || !(self.inner_tol > 0.0) {
            return Err(Error::Config(format!("invalid classifier options {self:?}")));
        }
        self.homotopy.validate()
    }
}

fn prune_small(gamma: &mut DVector<f64>) {
    let cut = (PRUNE_REL * gamma.amax()).max(PRUNE_ABS);
    for g in gamma.iter_mut() {
        if *g <= cut {
            *g = 0.0;
        }
    }
}

/// `nll(x) + lambda (sum x^2/gamma + ln|lambda I + Phi Gamma Phi^T| + sum f(gamma))`.
fn joint_objective(design: &LabeledDesign, pen: &PenaltyFamily, lambda: f64, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    let c: Vec<f64> = x.iter().map(|v| v * v).collect();
    let logdet = factor_sigma(&design.phi, gamma, lambda)?.logdet();
    let f: f64 = gamma.iter().map(|&g| pen.f(g)).sum();
    Ok(nll(design, x) + lambda * (ratio_sum(&c, gamma) + logdet + f))
}

/// Objective `nll(x) + lambda g_II(x)`, with `g_II` evaluated by its inner minimization.
pub fn type2_classifier_objective(design: &LabeledDesign, pen: &PenaltyFamily, lambda: f64, x: &DVector<f64>) -> Result<f64> {
    design.check_x(x)?;
    let problem = GammaProblem { phi: &design.phi, noise: lambda, c: x.iter().map(|v| v * v).collect(), pen: *pen };
    let (g, _) = problem.minimize(crate::gpenalty::initial_gamma(pen, x), crate::gpenalty::INNER_TOL, crate::gpenalty::INNER_MAX_SWEEPS)?;
    Ok(nll(design, x) + lambda * g)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (prev - next).abs() / prev.abs().max(next.abs()).max(1.0)
}

fn settled(opts: &ClassifierOptions, prev: f64, next: f64, x_old: &DVector<f64>, x: &DVector<f64>) -> bool {
    relative_change(prev, next) < opts.tol && (x - x_old).amax() <= opts.x_tol * (1.0 + x.amax())
}

/// Minimizes `nll(x) + lambda g_II(x)` by alternating the quadratic bound on
/// `nll` (an exact weighted-ridge step) with coordinate descent on `gamma`.
/// The trace records the joint bound, which never increases.
pub fn fit_type2_classifier(design: &LabeledDesign, pen: &PenaltyFamily, opts: &ClassifierOptions) -> Result<SolveReport> {
    let start = Instant::now();
    opts.validate()?;
    pen.validate()?;
    design.check_trainable()?;
    let lambda = opts.lambda;
    let m = design.ncols();
    let mut gamma = DVector::from_element(m, 1.0);
    let mut x = DVector::zeros(m);
    let mut value = joint_objective(design, pen, lambda, &x, &gamma)?;
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer {
        iterations += 1;
        // bound at v = x: (1/8)||y_tilde - Phi x||^2 + const
        let t = &design.phi * &x;
        let y_tilde = DVector::from_fn(t.len(), |j, _| t[j] + 4.0 * (design.labels[j] - sigmoid(t[j])));
        prune_small(&mut gamma);
        let x_old = std::mem::replace(&mut x, posterior_mean_raw(&design.phi, &gamma, 8.0 * lambda, &y_tilde)?);
        let problem = GammaProblem { phi: &design.phi, noise: lambda, c: x.iter().map(|v| v * v).collect(), pen: *pen };
        let (_, g, _) = problem.descend(gamma, 0.0, 1)?;
        gamma = g;
        let next = joint_objective(design, pen, lambda, &x, &gamma)?;
        let done = settled(opts, value, next, &x_old, &x);
        value = next;
        trace.push(value);
        if done {
            converged = true;
            break;
        }
    }
    prune_small(&mut gamma);
    for i in 0..m {
        if gamma[i] == 0.0 {
            x[i] = 0.0;
        }
    }
    Ok(SolveReport { x_hat: x, gamma_hat: gamma, objective_trace: trace, iterations, converged, wall_time: start.elapsed().as_secs_f64() })
}

/// `nll(x) + alpha1 sum x^2/gamma + ln|alpha2 I + Phi Gamma Phi^T|`.
pub fn approx_l0_objective(design: &LabeledDesign, alpha1: f64, alpha2: f64, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    design.check_x(x)?;
    let c: Vec<f64> = x.iter().map(|v| v * v).collect();
    let logdet = factor_sigma(&design.phi, gamma, alpha2)?.logdet();
    Ok(nll(design, x) + alpha1 * ratio_sum(&c, gamma) + logdet)
}

/// `min_x nll(x) + sum_i w_i |x_i|` by coordinate descent on the `1/4`
/// curvature bound, from `x`. Returns the number of sweeps and whether the
/// subgradient residual reached `tol`.
fn weighted_l1_logistic(design: &LabeledDesign, w: &DVector<f64>, x: &mut DVector<f64>, tol: f64, max_sweeps: usize) -> (usize, bool) {
    let phi = &design.phi;
    let m = phi.ncols();
    let curv: Vec<f64> = (0..m).map(|i| 0.25 * phi.column(i).norm_squared()).collect();
    let mut t = phi * &*x;
    let scale = phi.transpose().abs().column_sum().amax().max(1.0);
    for sweep in 1..=max_sweeps {
        for i in 0..m {
            if curv[i] == 0.0 {
                x[i] = 0.0;
                continue;
            }
            let col = phi.column(i);
            let g: f64 = (0..t.len()).map(|j| col[j] * (sigmoid(t[j]) - design.labels[j])).sum();
            let target = x[i] - g / curv[i];
            let thr = w[i] / curv[i];
            let next = if target > thr { target - thr } else if target < -thr { target + thr } else { 0.0 };
            let delta = next - x[i];
            if delta != 0.0 {
                t.axpy(delta, &col, 1.0);
                x[i] = next;
            }
        }
        let grad = nll_gradient(design, x);
        let kkt = (0..m).fold(0.0f64, |a, i| {
            let v = if x[i] != 0.0 { (grad[i] + w[i] * x[i].signum()).abs() } else { (grad[i].abs() - w[i]).max(0.0) };
            a.max(v)
        });
        if kkt <= tol * scale {
            return (sweep, true);
        }
    }
    (max_sweeps, false)
}

/// Minimizes `nll(x) + alpha1 sum x^2/gamma + ln|alpha2 I + Phi Gamma Phi^T|`
/// over `(x, gamma)` along a decreasing `(alpha1, alpha2)` homotopy. Each
/// iteration linearizes the log-determinant at the current `gamma`, solves the
/// resulting weighted-l1 logistic problem with weights `2 sqrt(alpha1 z_i)` and
/// sets `gamma_i = |x_i| sqrt(alpha1 / z_i)`. A coefficient at zero keeps a
/// finite weight, so it can re-enter.
pub fn fit_approx_l0_classifier(design: &LabeledDesign, opts: &ClassifierOptions) -> Result<SolveReport> {
    let start = Instant::now();
    opts.validate()?;
    design.check_trainable()?;
    let m = design.ncols();
    let mut x = match &opts.x_init {
        Some(v) if v.len() == m => DVector::from_column_slice(v),
        Some(v) => return Err(Error::Dimension(format!("x_init has {} entries for {m} features", v.len()))),
        None => DVector::zeros(m),
    };
    let mut gamma = if opts.x_init.is_some() { x.map(f64::abs) } else { DVector::from_element(m, 1.0) };
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let zero_y = DVector::zeros(design.nrows());
    for (alpha1, alpha2) in opts.homotopy.schedule() {
        converged = false;
        let mut value = approx_l0_objective(design, alpha1, alpha2, &x, &gamma)?;
        if !value.is_finite() {
            // 0 * inf when a start has x_i != 0 with gamma_i = 0
            gamma = x.map(|v| v.abs().max(1e-12));
            value = approx_l0_objective(design, alpha1, alpha2, &x, &gamma)?;
        }
        trace.push(value);
        while iterations < opts.max_outer {
            iterations += 1;
            let post = Posterior::compute(&design.phi, &gamma, alpha2, &zero_y)?;
            let z = post.z.map(|v| v.max(f64::MIN_POSITIVE));
            let w = z.map(|zi| 2.0 * (alpha1 * zi).sqrt());
            let x_old = x.clone();
            weighted_l1_logistic(design, &w, &mut x, opts.inner_tol, opts.max_inner);
            gamma = DVector::from_fn(m, |i, _| x[i].abs() * (alpha1 / z[i]).sqrt());
            let next = approx_l0_objective(design, alpha1, alpha2, &x, &gamma)?;
            let done = settled(opts, value, next, &x_old, &x);
            value = next;
            trace.push(value);
            if done {
                converged = true;
                break;
            }
        }
    }
    Ok(SolveReport { x_hat: x, gamma_hat: gamma, objective_trace: trace, iterations, converged, wall_time: start.elapsed().as_secs_f64() })
}

/// Fitted classifier as exported to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub method: String,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub gamma: Vec<f64>,
    pub converged: bool,
}

impl ClassifierModel {
    pub fn from_report(method: &str, report: &SolveReport) -> Self {
        Self {
            method: method.to_string(),
            support: (0..report.x_hat.len()).filter(|&i| report.x_hat[i] != 0.0).collect(),
            weights: report.x_hat.iter().copied().collect(),
            gamma: report.gamma_hat.iter().copied().collect(),
            converged: report.converged,
        }
    }
}

/// Class-1 probabilities `sigma(phi_j^T x)` and 0/1 decisions at 0.5.
pub fn predict(phi: &DMatrix<f64>, x: &DVector<f64>) -> Result<(Vec<f64>, Vec<u8>)> {
    if phi.ncols() != x.len() {
        return Err(Error::Dimension(format!("{} features but {} weights", phi.ncols(), x.len())));
    }
    let p: Vec<f64> = (phi * x).iter().map(|&t| sigmoid(t)).collect();
    let labels = p.iter().map(|&q| u8::from(q >= 0.5)).collect();
    Ok((p, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::is_non_increasing;
    use crate::testutil::{normal_vec, rng};
    use rand::Rng;

    pub(crate) fn toy(seed: u64, n: usize, m: usize) -> LabeledDesign {
        let mut r = rng(seed);
        let phi = DMatrix::from_fn(n, m, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal));
        let truth = normal_vec(&mut r, m) * 2.0;
        let t = &phi * truth;
        let labels = DVector::from_fn(n, |j, _| if r.random::<f64>() < sigmoid(t[j]) { 1.0 } else { 0.0 });
        let mut d = LabeledDesign::new(phi, labels).unwrap();
        // make both classes present
        d.labels[0] = 1.0;
        d.labels[1] = 0.0;
        d
    }

    #[test]
    fn nll_at_zero_and_naive_formula() {
        let d = toy(1, 7, 3);
        assert!((nll(&d, &DVector::zeros(3)) - 7.0 * 2f64.ln()).abs() < 1e-14);
        let x = DVector::from_column_slice(&[0.3, -1.2, 0.7]);
        let t = &d.phi * &x;
        let naive: f64 = (0..7)
            .map(|j| {
                let s = 1.0 / (1.0 + (-t[j]).exp());
                -(d.labels[j] * s.ln() + (1.0 - d.labels[j]) * (1.0 - s).ln())
            })
            .sum();
        assert!((nll(&d, &x) - naive).abs() < 1e-12);
    }

    #[test]
    fn nll_vanishes_on_separable_direction() {
        let phi = DMatrix::from_column_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let d = LabeledDesign::new(phi, DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0])).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let v = nll(&d, &DVector::from_element(1, 2f64.powi(k)));
            assert!(v < prev || v == 0.0);
            prev = v;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = toy(2, 9, 4);
        let x = DVector::from_column_slice(&[0.5, -0.2, 1.1, 0.0]);
        let g = nll_gradient(&d, &x);
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (nll(&d, &xp) - nll(&d, &xm)) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3));
        }
    }

    #[test]
    fn pi_bound_is_tight_and_quadratic() {
        let d = toy(3, 6, 3);
        let v = DVector::from_column_slice(&[0.4, 0.1, -0.3]);
        assert_eq!(pi_bound(&d, &v, &v), nll(&d, &v));
        let e = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let gap = |delta: f64| pi_bound(&d, &(&v + &e * delta), &v) - nll(&d, &(&v + &e * delta));
        let (g1, g2) = (gap(1e-2), gap(5e-3));
        assert!(g1 >= 0.0 && g2 >= 0.0);
        assert!((g1 / g2 - 4.0).abs() < 0.1, "{}", g1 / g2);
    }

    #[test]
    fn type2_fit_trace_and_sparsity() {
        for seed in 0..6 {
            let d = toy(10 + seed, 8, 20);
            let lambda = if seed % 2 == 0 { 4.0 } else { 0.3 };
            let opts = ClassifierOptions { lambda, ..Default::default() };
            let rep = fit_type2_classifier(&d, &PenaltyFamily::ArdFlat, &opts).unwrap();
            assert!(is_non_increasing(&rep.objective_trace, 1e-9), "seed {seed}");
            assert!(rep.x_hat.iter().filter(|&&v| v != 0.0).count() <= 8, "seed {seed}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let phi = DMatrix::from_element(3, 2, 1.0);
        let d = LabeledDesign::new(phi, DVector::from_element(3, 1.0)).unwrap();
        assert!(fit_type2_classifier(&d, &PenaltyFamily::ArdFlat, &ClassifierOptions::default()).is_err());
        assert!(LabeledDesign::new(DMatrix::from_element(2, 2, 1.0), DVector::from_column_slice(&[0.0, 2.0])).is_err());
    }

    #[test]
    fn predictions_threshold_at_half() {
        let phi = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 2.0]);
        let (p, l) = predict(&phi, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(l, vec![0, 1, 1]);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }
}
