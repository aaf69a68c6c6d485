//! Learning the trade-off parameter `lambda` jointly with the coefficients.
//!
//! Type I: `min_{x,u} sum_i g(x_i) + n g(||u|| / sqrt(n))` subject to
//! `y = Phi x + u`, which penalizes `lambda` in proportion to the `n` noise
//! dimensions; the estimate is read off the residual as `lambda = 1/h'(||u||^2/n)`.
//!
//! Type II: `lambda` joins `gamma` as an `n`-fold replicated hyperparameter in
//! the marginal likelihood and both are updated by EM.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{min_norm_solution, weighted_ridge};
use crate::model::{dual_data_fit, posterior_mean_raw, HyperState, Posterior};
use crate::penalty::PenaltyFamily;
use crate::type1::{gamma_from_slope, smoothed_penalty, Smoothing};

pub const LAMBDA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaOptions {
    pub max_iters: usize,
    /// Type I: relative change of `x`; Type II: relative objective change.
    pub tol: f64,
    pub epsilon_smooth: f64,
    pub lambda_floor: f64,
    pub prune_threshold: f64,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-8, epsilon_smooth: 1e-9, lambda_floor: LAMBDA_FLOOR, prune_threshold: 1e-12 }
    }
}

impl LambdaOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0)
            || self.max_iters == 0
            || !(self.epsilon_smooth >= 0.0)
            || !(self.lambda_floor > 0.0)
            || !(self.prune_threshold >= 0.0)
        {
            return Err(Error::Config(format!("invalid lambda-learning options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda_star: f64,
    /// Residual `y - Phi x_star`.
    pub u_star: DVector<f64>,
    pub x_star: DVector<f64>,
    pub objective: f64,
    /// Hyperparameters at the solution.
    pub gamma: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LambdaEstimate {
    /// Maximum-likelihood noise variance `||u||^2 / n` for the same residual.
    /// It ignores the prior entirely, unlike `lambda_star`.
    pub fn ml_lambda(&self) -> f64 {
        ml_lambda(&self.u_star)
    }
}

pub fn ml_lambda(u: &DVector<f64>) -> f64 {
    u.norm_squared() / u.len() as f64
}

/// `lambda = 1/h'(z)`, floored; the minimizer of `z/lambda + ln lambda + f(lambda)`.
pub fn lambda_from_residual(pen: &PenaltyFamily, z: f64, floor: f64) -> f64 {
    pen.optimal_gamma(z).max(floor)
}

fn require_signal(dict: &Dictionary, y: &DVector<f64>) -> Result<()> {
    dict.check_signal(y)?;
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::Config("lambda learning needs a nonzero signal".into()));
    }
    Ok(())
}

/// `sum_i h(x_i^2) + n h(||u||^2 / n)`.
pub fn type1_lambda_cost(pen: &PenaltyFamily, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let n = u.len() as f64;
    x.iter().map(|v| pen.h(v * v)).sum::<f64>() + n * pen.h(u.norm_squared() / n)
}

pub fn learn_lambda_type1(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    y: &DVector<f64>,
    opts: &LambdaOptions,
) -> Result<LambdaEstimate> {
    pen.validate()?;
    opts.validate()?;
    require_signal(dict, y)?;
    let phi = dict.matrix();
    let (n, m) = phi.shape();
    let nf = n as f64;
    let gram = (m <= n).then(|| phi.transpose() * phi);
    let phit_y = phi.transpose() * y;
    let ones = DVector::from_element(m, 1.0);

    let smoothed = |x: &DVector<f64>, eps: f64| {
        let u = y - phi * x;
        smoothed_penalty(pen, x, eps) + nf * pen.h(u.norm_squared() / nf + eps)
    };

    let mut x = min_norm_solution(phi, y)?;
    if (y - phi * &x).norm() <= 1e-8 * y.norm() {
        // an exact fit pins u = 0; start from a mildly regularized fit instead
        x = weighted_ridge(phi, gram.as_ref(), Some(&phit_y), y, 0.1, &ones)?;
    }
    let mut smoothing = Smoothing::new(opts.epsilon_smooth);
    let mut trace = vec![smoothed(&x, smoothing.eps)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let u = y - phi * &x;
        let omega = pen.h_prime(u.norm_squared() / nf + smoothing.eps);
        let gamma = x.map(|v| gamma_from_slope(pen, v * v + smoothing.eps));
        let next = if omega.is_finite() && omega > 0.0 {
            weighted_ridge(phi, gram.as_ref(), Some(&phit_y), y, 1.0 / omega, &gamma)?
        } else {
            // infinitely steep residual penalty: interpolate
            min_norm_solution(phi, y)?
        };
        let change = (&next - &x).norm();
        let scale = next.norm();
        x = next;
        let settled = change <= opts.tol * scale;
        if settled && smoothing.at_floor() {
            trace.push(smoothed(&x, smoothing.eps));
            converged = true;
            break;
        }
        smoothing.step(settled);
        trace.push(smoothed(&x, smoothing.eps));
    }
    let cut = smoothing.zero_threshold(pen);
    for v in x.iter_mut() {
        if v.abs() < cut {
            *v = 0.0;
        }
    }
    let mut u = y - phi * &x;
    if ml_lambda(&u).sqrt() < cut {
        // same snapping rule as the coefficients: the fit is exact, so let
        // the surviving coefficients absorb what is left of the residual
        let support: Vec<usize> = (0..m).filter(|&i| x[i] != 0.0).collect();
        if !support.is_empty() {
            let xs = min_norm_solution(&phi.select_columns(support.iter()), y)?;
            for (&i, v) in support.iter().zip(xs.iter()) {
                x[i] = *v;
            }
        }
        u.fill(0.0);
    }
    let lambda_star = lambda_from_residual(pen, ml_lambda(&u), opts.lambda_floor);
    let gamma = x.map(|v| gamma_from_slope(pen, v * v));
    Ok(LambdaEstimate {
        lambda_star,
        objective: type1_lambda_cost(pen, &x, &u),
        u_star: u,
        x_star: x,
        gamma,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// `y^T Sigma_y^{-1} y + sum_i [ln gamma_i + f(gamma_i)] + n ln lambda + n f(lambda)`.
pub fn type1_lambda_objective(dict: &Dictionary, pen: &PenaltyFamily, hyp: &HyperState, y: &DVector<f64>) -> Result<f64> {
    if !(hyp.lambda > 0.0) || hyp.gamma.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::Config("the lambda objective needs lambda > 0 and gamma > 0".into()));
    }
    let n = dict.nrows() as f64;
    let fit = dual_data_fit(dict, hyp, y)?;
    let prior: f64 = hyp.gamma.iter().map(|&g| g.ln() + pen.f(g)).sum();
    Ok(fit + prior + n * hyp.lambda.ln() + n * pen.f(hyp.lambda))
}

/// `y^T Sigma_y^{-1} y + ln|Sigma_y| + sum_i f(gamma_i) + n f(lambda)`.
pub fn type2_lambda_objective(dict: &Dictionary, pen: &PenaltyFamily, hyp: &HyperState, y: &DVector<f64>) -> Result<f64> {
    let base = crate::type2::type2_objective(dict, pen, hyp, y)?;
    Ok(base + dict.nrows() as f64 * pen.f(hyp.lambda))
}

pub fn learn_lambda_type2(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    y: &DVector<f64>,
    opts: &LambdaOptions,
) -> Result<LambdaEstimate> {
    pen.validate()?;
    opts.validate()?;
    dict.check_signal(y)?;
    let phi = dict.matrix();
    let (n, m) = phi.shape();
    let nf = n as f64;
    if y.iter().all(|&v| v == 0.0) {
        return Ok(LambdaEstimate {
            lambda_star: opts.lambda_floor,
            u_star: DVector::zeros(n),
            x_star: DVector::zeros(m),
            objective: f64::NEG_INFINITY,
            gamma: DVector::zeros(m),
            objective_trace: vec![f64::NEG_INFINITY],
            iterations: 0,
            converged: true,
        });
    }
    let cost = |post: &Posterior, gamma: &DVector<f64>, lambda: f64| {
        post.fit + post.factor.logdet() + gamma.iter().map(|&g| pen.f(g)).sum::<f64>() + nf * pen.f(lambda)
    };
    let mut gamma = DVector::from_element(m, 1.0);
    let mut lambda = (0.1 * y.norm_squared() / nf).max(opts.lambda_floor);
    let mut post = Posterior::compute(phi, &gamma, lambda, y)?;
    let mut value = cost(&post, &gamma, lambda);
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let resid = (y - phi * &post.mean).norm_squared();
        let mut dof = 0.0;
        let mut next = DVector::zeros(m);
        for i in 0..m {
            if gamma[i] > 0.0 {
                dof += gamma[i] * post.z[i];
                let g = pen.optimal_gamma(post.mean[i] * post.mean[i] + post.s_diag[i].max(0.0));
                next[i] = if g < opts.prune_threshold { 0.0 } else { g };
            }
        }
        // E||u||^2 / n with tr(Phi S Phi^T) = lambda sum_i (1 - S_ii / gamma_i)
        let c = (resid + lambda * dof) / nf;
        lambda = lambda_from_residual(pen, c, opts.lambda_floor);
        gamma = next;
        post = Posterior::compute(phi, &gamma, lambda, y)?;
        let next_value = cost(&post, &gamma, lambda);
        let change = (value - next_value).abs() / value.abs().max(next_value.abs()).max(1.0);
        value = next_value;
        trace.push(value);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let x = posterior_mean_raw(phi, &gamma, lambda, y)?;
    Ok(LambdaEstimate {
        lambda_star: lambda,
        u_star: y - phi * &x,
        x_star: x,
        objective: value,
        gamma,
        objective_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::is_non_increasing;
    use crate::testutil::{gaussian_dict, normal_vec, random_instance, rng, scalar_dict};

    #[test]
    fn gaussian_penalty_gives_unit_lambda() {
        let mut r = rng(1);
        let d = gaussian_dict(&mut r, 12, 5);
        let y = normal_vec(&mut r, 12);
        let est = learn_lambda_type1(&d, &PenaltyFamily::Gaussian, &y, &LambdaOptions::default()).unwrap();
        assert_eq!(est.lambda_star, 1.0);
        assert!((est.ml_lambda() - est.u_star.norm_squared() / 12.0).abs() < 1e-15);
        assert!((&y - d.matrix() * &est.x_star - &est.u_star).amax() < 1e-8);
    }

    #[test]
    fn lp1_rule_value() {
        let pen = PenaltyFamily::LpNorm { p: 1.0 };
        assert!((lambda_from_residual(&pen, 0.25, LAMBDA_FLOOR) - 1.0).abs() < 1e-15);
        let z: f64 = 0.25;
        let fd = (pen.h(z + 1e-7) - pen.h(z - 1e-7)) / 2e-7;
        assert!((1.0 / fd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_allocation_matches_grid() {
        let d = scalar_dict();
        let y = DVector::from_element(1, 2.0);
        for pen in [PenaltyFamily::LpNorm { p: 0.01 }, PenaltyFamily::LpNorm { p: 1.5 }] {
            let est = learn_lambda_type1(&d, &pen, &y, &LambdaOptions::default()).unwrap();
            let mut best = f64::INFINITY;
            for k in 0..=200_000 {
                let x = -1.0 + 4.0 * k as f64 / 200_000.0;
                let v = pen.h(x * x) + pen.h((2.0 - x) * (2.0 - x));
                best = best.min(v);
            }
            assert!(est.objective <= best + 1e-6, "{pen}: {} vs {best}", est.objective);
        }
    }

    #[test]
    fn type1_trace_is_monotone() {
        let mut r = rng(2);
        for pen in [PenaltyFamily::LpNorm { p: 0.01 }, PenaltyFamily::LpNorm { p: 1.0 }] {
            let d = gaussian_dict(&mut r, 30, 15);
            let y = normal_vec(&mut r, 30);
            let est = learn_lambda_type1(&d, &pen, &y, &LambdaOptions::default()).unwrap();
            assert!(is_non_increasing(&est.objective_trace, 1e-10), "{pen}");
            assert!(est.lambda_star > 0.0);
        }
    }

    #[test]
    fn lambda_objective_examples() {
        let d = scalar_dict();
        let y = DVector::from_element(1, 3.0);
        let hyp = HyperState::from_slice(&[1.0], 1.0).unwrap();
        assert!((type1_lambda_objective(&d, &PenaltyFamily::ArdFlat, &hyp, &y).unwrap() - 4.5).abs() < 1e-14);

        let mut r = rng(3);
        let (d, hyp, y) = random_instance(&mut r, 4, 6, 0.4);
        let pen = PenaltyFamily::LogSum { delta: 0.1 };
        let direct = dual_data_fit(&d, &hyp, &y).unwrap()
            + hyp.gamma.iter().map(|&g| g.ln() + pen.f(g)).sum::<f64>()
            + 4.0 * (0.4f64.ln() + pen.f(0.4));
        assert!((type1_lambda_objective(&d, &pen, &hyp, &y).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn type2_scalar_flat_basin() {
        let d = scalar_dict();
        let y = DVector::from_element(1, 3.0);
        let opts = LambdaOptions { max_iters: 100_000, tol: 1e-14, ..Default::default() };
        let est = learn_lambda_type2(&d, &PenaltyFamily::ArdFlat, &y, &opts).unwrap();
        // 2-D grid over (gamma, lambda) in (0, 20]^2
        let f = |g: f64, l: f64| 9.0 / (l + g) + (l + g).ln();
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..=500 {
            for j in 1..=500 {
                let (g, l) = (20.0 * i as f64 / 500.0, 20.0 * j as f64 / 500.0);
                let v = f(g, l);
                if v < best.0 {
                    best = (v, g + l);
                }
            }
        }
        let total = est.lambda_star + est.gamma[0];
        assert!((total - best.1).abs() <= 0.04 + 1e-9, "{total} vs {}", best.1);
        assert!((total - 9.0).abs() < 1e-5, "{total}");
        assert!(est.objective <= best.0 + 1e-12);
    }

    #[test]
    fn type2_zero_signal() {
        let mut r = rng(4);
        let d = gaussian_dict(&mut r, 5, 7);
        let est = learn_lambda_type2(&d, &PenaltyFamily::ArdFlat, &DVector::zeros(5), &LambdaOptions::default()).unwrap();
        assert_eq!(est.lambda_star, LAMBDA_FLOOR);
        assert!(est.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn type2_trace_is_monotone() {
        let mut r = rng(5);
        for pen in [PenaltyFamily::ArdFlat, PenaltyFamily::LpNorm { p: 0.5 }] {
            let d = gaussian_dict(&mut r, 25, 12);
            let x0 = DVector::from_fn(12, |i, _| if i < 3 { 2.0 } else { 0.0 });
            let y = d.matrix() * x0 + normal_vec(&mut r, 25) * 0.3;
            let est = learn_lambda_type2(&d, &pen, &y, &LambdaOptions::default()).unwrap();
            assert!(is_non_increasing(&est.objective_trace, 1e-9), "{pen}");
            let hyp = HyperState::new(est.gamma.clone(), est.lambda_star).unwrap();
            let v = type2_lambda_objective(&d, &pen, &hyp, &y).unwrap();
            assert!((v - est.objective).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }
}
