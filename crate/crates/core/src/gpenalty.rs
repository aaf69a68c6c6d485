//! The Type II coefficient-space penalty
//!
//! ```text
//! g_II(x) = min_{gamma >= 0} sum_i x_i^2 / gamma_i + ln|lambda I + Phi Gamma Phi^T| + sum_i f(gamma_i)
//! ```
//!
//! evaluated by coordinate descent on `gamma`, and a numeric checker for
//! concavity of the hyperparameter-space penalty.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::factor_sigma;
use crate::penalty::PenaltyFamily;

pub(crate) const INNER_TOL: f64 = 1e-10;
pub(crate) const INNER_MAX_SWEEPS: usize = 500;

/// `sum_i c_i / gamma_i + ln|noise I + Phi Gamma Phi^T| + sum_i f(gamma_i)` with `0/0 = 0`.
pub(crate) struct GammaProblem<'a> {
    pub phi: &'a DMatrix<f64>,
    pub noise: f64,
    pub c: Vec<f64>,
    pub pen: PenaltyFamily,
}

pub(crate) fn ratio_sum(c: &[f64], gamma: &DVector<f64>) -> f64 {
    c.iter()
        .zip(gamma.iter())
        .map(|(&ci, &g)| {
            if ci == 0.0 {
                0.0
            } else if g == 0.0 {
                f64::INFINITY
            } else {
                ci / g
            }
        })
        .sum()
}

impl GammaProblem<'_> {
    pub fn value(&self, gamma: &DVector<f64>) -> Result<f64> {
        let factor = factor_sigma(self.phi, gamma, self.noise)?;
        let f: f64 = gamma.iter().map(|&g| self.pen.f(g)).sum();
        Ok(ratio_sum(&self.c, gamma) + factor.logdet() + f)
    }

    /// Minimizes `c/g + ln(1 + g s) + f(g)` over `g >= 0`.
    fn coordinate_min(&self, c: f64, s: f64) -> f64 {
        match self.pen {
            PenaltyFamily::ArdFlat => {
                if c <= 0.0 {
                    0.0
                } else {
                    0.5 * c + (0.25 * c * c + c / s).sqrt()
                }
            }
            PenaltyFamily::Gaussian => 1.0,
            PenaltyFamily::LpNorm { p } if p >= 2.0 => 1.0,
            pen => scalar_log_min(|g| -c / g + g * s / (1.0 + g * s) + g * pen.f_prime(g)),
        }
    }

    /// Coordinate descent from `gamma0`; returns `(value, gamma)`.
    pub fn minimize(&self, gamma0: DVector<f64>, tol: f64, max_sweeps: usize) -> Result<(f64, DVector<f64>)> {
        match self.descend(gamma0, tol, max_sweeps)? {
            (value, gamma, true) => Ok((value, gamma)),
            _ => Err(Error::NonConvergence { what: "g_II inner minimization", iterations: max_sweeps }),
        }
    }

    /// Up to `max_sweeps` coordinate sweeps; every coordinate step is an exact
    /// minimization, so the value never increases. The flag reports whether the
    /// relative change fell below `tol`.
    pub fn descend(&self, gamma0: DVector<f64>, tol: f64, max_sweeps: usize) -> Result<(f64, DVector<f64>, bool)> {
        let m = self.phi.ncols();
        let mut gamma = gamma0;
        let mut value = self.value(&gamma)?;
        for _ in 0..max_sweeps {
            let mut inv = factor_sigma(self.phi, &gamma, self.noise)?.inverse();
            for i in 0..m {
                let phi_i = self.phi.column(i).clone_owned();
                let mut u = &inv * &phi_i;
                let a = phi_i.dot(&u);
                let old = gamma[i];
                // remove column i from Sigma^{-1}
                if old > 0.0 {
                    let denom = 1.0 - old * a;
                    if denom > 1e-6 {
                        inv.ger(old / denom, &u, &u, 1.0);
                        u /= denom;
                    } else {
                        // the downdate cancels catastrophically when column i
                        // dominates Sigma; refactor without it
                        gamma[i] = 0.0;
                        inv = factor_sigma(self.phi, &gamma, self.noise)?.inverse();
                        u = &inv * &phi_i;
                    }
                }
                let s = phi_i.dot(&u).max(0.0);
                let new = self.coordinate_min(self.c[i], s);
                if new > 0.0 {
                    inv.ger(-new / (1.0 + new * s), &u, &u, 1.0);
                }
                gamma[i] = new;
            }
            let next = self.value(&gamma)?;
            let change = (value - next).abs();
            value = next;
            if change <= tol * value.abs().max(1.0) {
                return Ok((value, gamma, true));
            }
        }
        Ok((value, gamma, false))
    }
}

/// Finds the minimizer of a unimodal scalar function of `g > 0` from the sign of
/// `dphi(g) = g * phi'(g)`, bisecting in `ln g` with secant acceleration.
fn scalar_log_min(dphi: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    let (mut dlo, mut dhi) = (dphi(lo.exp()), dphi(hi.exp()));
    if dlo >= 0.0 {
        return lo.exp();
    }
    if dhi <= 0.0 {
        return hi.exp();
    }
    for _ in 0..200 {
        let secant = lo - dlo * (hi - lo) / (dhi - dlo);
        let mid = 0.5 * (lo + hi);
        // fall back to bisection when the secant point hugs an endpoint
        let t = if secant.is_finite() && (secant - lo).min(hi - secant) > 0.05 * (hi - lo) {
            secant
        } else {
            mid
        };
        let d = dphi(t.exp());
        if d < 0.0 {
            lo = t;
            dlo = d;
        } else {
            hi = t;
            dhi = d;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub(crate) fn initial_gamma(pen: &PenaltyFamily, x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| if pen.is_ard() { v * v } else { v * v + 1.0 })
}

/// Evaluates `g_II(x)` and its minimizing hyperparameters.
pub fn g2_penalty(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    lambda: f64,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if !(lambda > 0.0) {
        return Err(Error::Config("g_II requires lambda > 0".into()));
    }
    dict.check_coefficients(x)?;
    pen.validate()?;
    let problem = GammaProblem {
        phi: dict.matrix(),
        noise: lambda,
        c: x.iter().map(|v| v * v).collect(),
        pen: *pen,
    };
    problem.minimize(initial_gamma(pen, x), INNER_TOL, INNER_MAX_SWEEPS)
}

/// Outcome of [`check_gamma_concavity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub passed: bool,
    /// Largest observed violation; `0` when none.
    pub worst_violation: f64,
    pub segments: usize,
}

/// Tests midpoint concavity and monotonicity of
/// `gamma -> ln|lambda I + Phi Gamma Phi^T| + sum_i f(gamma_i)` on random
/// segments of the positive orthant, for an arbitrary `f`.
pub fn check_gamma_concavity_with(
    dict: &Dictionary,
    lambda: f64,
    f: impl Fn(f64) -> f64,
    samples: usize,
    seed: u64,
) -> Result<ConcavityReport> {
    if !(lambda > 0.0) {
        return Err(Error::Config("concavity check requires lambda > 0".into()));
    }
    let m = dict.ncols();
    let phi = dict.matrix();
    let eval = |g: &DVector<f64>| -> Result<f64> {
        Ok(factor_sigma(phi, g, lambda)?.logdet() + g.iter().map(|&v| f(v)).sum::<f64>())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| DVector::from_fn(m, |_, _| (rng.random::<f64>() * 6.0 - 3.0).exp());
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let mid = (&a + &b) * 0.5;
        let (fa, fb, fm) = (eval(&a)?, eval(&b)?, eval(&mid)?);
        let scale = 1.0 + fa.abs().max(fb.abs());
        worst = worst.max((0.5 * (fa + fb) - fm) / scale);
        // monotone along a non-negative increment
        let up = &a + draw(&mut rng);
        worst = worst.max((fa - eval(&up)?) / scale);
    }
    Ok(ConcavityReport { passed: worst <= 1e-9, worst_violation: worst.max(0.0), segments: samples })
}

pub fn check_gamma_concavity(
    dict: &Dictionary,
    pen: &PenaltyFamily,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<ConcavityReport> {
    let pen = *pen;
    check_gamma_concavity_with(dict, lambda, move |g| pen.f(g), samples, seed)
}

/// Concavity test on one explicit segment `[a, b]`.
pub fn segment_concavity_violation(
    dict: &Dictionary,
    lambda: f64,
    f: impl Fn(f64) -> f64,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    let eval = |g: &DVector<f64>| -> Result<f64> {
        Ok(factor_sigma(dict.matrix(), g, lambda)?.logdet() + g.iter().map(|&v| f(v)).sum::<f64>())
    };
    let mid = (a + b) * 0.5;
    Ok((0.5 * (eval(a)? + eval(b)?) - eval(&mid)?).max(0.0))
}
