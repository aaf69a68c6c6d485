//! Type I (MAP) estimation by iterative reweighted least squares.
//!
//! Minimizes `||y - Phi x||^2 + lambda sum_i g(x_i)` with `g(x) = h(x^2)`. Each
//! iteration tightens the variational bound on `g` at the current iterate,
//! `1/gamma_i = h'(x_i^2 + eps)`, then solves the resulting weighted ridge
//! problem exactly, so the (smoothed) objective never increases.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{min_norm_solution, weighted_ridge};
use crate::model::{dual_data_fit, posterior_mean, HyperState};
use crate::penalty::PenaltyFamily;
use crate::report::SolveReport;

/// Coefficients below this magnitude are always reported as exact zeros.
pub const HARD_ZERO: f64 = 1e-10;
pub(crate) const EPS_FLOOR: f64 = 1e-12;
pub(crate) const EPS_DECAY_EVERY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Type1Options {
    pub max_iters: usize,
    /// Relative change of `x` between iterations.
    pub tol: f64,
    /// Initial smoothing added to `x_i^2` inside `h'`. Decays tenfold every
    /// 20 iterations (or on early convergence) down to `1e-12`.
    pub epsilon_smooth: f64,
}

impl Default for Type1Options {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-8, epsilon_smooth: 1e-9 }
    }
}

impl Type1Options {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.epsilon_smooth >= 0.0) {
            return Err(Error::Config(format!("invalid type I options {self:?}")));
        }
        Ok(())
    }
}

/// Smoothing schedule shared with the lambda learner.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Smoothing {
    pub eps: f64,
    floor: f64,
    since_decay: usize,
}

impl Smoothing {
    pub fn new(eps: f64) -> Self {
        Self { eps, floor: eps.min(EPS_FLOOR), since_decay: 0 }
    }

    pub fn at_floor(&self) -> bool {
        self.eps <= self.floor
    }

    /// Magnitude below which a coefficient is indistinguishable from zero:
    /// once `x^2 < eps` the smoothed penalty is flat in `x`, and inactive
    /// coordinates settle near `sqrt(eps)` instead of reaching zero.
    pub fn zero_threshold(&self, pen: &PenaltyFamily) -> f64 {
        match pen {
            PenaltyFamily::Gaussian => HARD_ZERO,
            _ => HARD_ZERO.max(self.eps.sqrt()),
        }
    }

    /// Advances one iteration; decays early when the iterate has settled.
    pub fn step(&mut self, settled: bool) {
        self.since_decay += 1;
        if !self.at_floor() && (settled || self.since_decay >= EPS_DECAY_EVERY) {
            self.eps = (self.eps * 0.1).max(self.floor);
            self.since_decay = 0;
        }
    }
}

/// `1/gamma = h'(z)`, with `h' = inf` mapped to `gamma = 0`.
pub(crate) fn gamma_from_slope(pen: &PenaltyFamily, z: f64) -> f64 {
    let slope = pen.h_prime(z);
    if slope.is_finite() {
        1.0 / slope
    } else {
        0.0
    }
}

pub(crate) fn smoothed_penalty(pen: &PenaltyFamily, x: &DVector<f64>, eps: f64) -> f64 {
    x.iter().map(|v| pen.h(v * v + eps)).sum()
}

pub fn solve_type1(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    lambda: f64,
    y: &DVector<f64>,
    opts: &Type1Options,
) -> Result<SolveReport> {
    let start = Instant::now();
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("type I solver requires lambda > 0, got {lambda}")));
    }
    pen.validate()?;
    opts.validate()?;
    dict.check_signal(y)?;
    let phi = dict.matrix();
    let (n, m) = phi.shape();
    let gram = (m <= n).then(|| phi.transpose() * phi);
    let phit_y = phi.transpose() * y;

    let objective = |x: &DVector<f64>, eps: f64| {
        (y - phi * x).norm_squared() + lambda * smoothed_penalty(pen, x, eps)
    };

    let mut x = min_norm_solution(phi, y)?;
    let mut smoothing = Smoothing::new(opts.epsilon_smooth);
    let mut trace = vec![objective(&x, smoothing.eps)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let gamma = x.map(|v| gamma_from_slope(pen, v * v + smoothing.eps));
        let next = weighted_ridge(phi, gram.as_ref(), Some(&phit_y), y, lambda, &gamma)?;
        let change = (&next - &x).norm();
        let scale = next.norm();
        x = next;
        let settled = change <= opts.tol * scale;
        if settled && smoothing.at_floor() {
            trace.push(objective(&x, smoothing.eps));
            converged = true;
            break;
        }
        smoothing.step(settled);
        trace.push(objective(&x, smoothing.eps));
    }

    let cut = smoothing.zero_threshold(pen);
    for v in x.iter_mut() {
        if v.abs() < cut {
            *v = 0.0;
        }
    }
    let gamma_hat = x.map(|v| gamma_from_slope(pen, v * v));
    Ok(SolveReport {
        x_hat: x,
        gamma_hat,
        objective_trace: trace,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// `||y - Phi x||^2 + lambda sum_i g(x_i)`.
pub fn type1_objective(dict: &Dictionary, pen: &PenaltyFamily, lambda: f64, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (y - dict.matrix() * x).norm_squared() + lambda * x.iter().map(|&v| pen.g(v)).sum::<f64>()
}

/// Type I cost in hyperparameter space,
/// `y^T Sigma_y^{-1} y + ln|Gamma| + sum_i f(gamma_i)`. Returns `-inf` when any
/// `gamma_i` is zero.
pub fn type1_gamma_objective(dict: &Dictionary, pen: &PenaltyFamily, hyp: &HyperState, y: &DVector<f64>) -> Result<f64> {
    if hyp.gamma.iter().any(|&g| g == 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let fit = dual_data_fit(dict, hyp, y)?;
    Ok(fit + hyp.gamma.iter().map(|&g| g.ln() + pen.f(g)).sum::<f64>())
}

/// Type I coefficients from Type I hyperparameters; same computation as the
/// posterior mean.
pub fn x_from_gamma_type1(dict: &Dictionary, hyp: &HyperState, y: &DVector<f64>) -> Result<DVector<f64>> {
    posterior_mean(dict, hyp, y)
}
