//! Marginal covariance algebra: `Sigma_y = lambda I + Phi Gamma Phi^T`, its
//! Cholesky factor, the posterior moments and the dual data-fit identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Hyperparameters: per-column prior variances `gamma` and noise variance `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub gamma: DVector<f64>,
    pub lambda: f64,
}

impl HyperState {
    pub fn new(gamma: DVector<f64>, lambda: f64) -> Result<Self> {
        if gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config("gamma entries must be non-negative".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(Self { gamma, lambda })
    }

    pub fn from_slice(gamma: &[f64], lambda: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(gamma), lambda)
    }

    pub fn active_set(&self, threshold: f64) -> Vec<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let scale = matrix.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let chol = Cholesky::new(matrix).ok_or(Error::NotPositiveDefinite)?;
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !(scale > 0.0) || min_pivot * min_pivot <= 1e-14 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// `noise I + Phi_A diag(gamma_A) Phi_A^T` over the columns with positive gamma.
pub(crate) fn sigma_matrix(phi: &DMatrix<f64>, gamma: &DVector<f64>, noise: f64) -> DMatrix<f64> {
    let n = phi.nrows();
    let active: Vec<usize> = (0..phi.ncols()).filter(|&i| gamma[i] > 0.0).collect();
    let mut b = DMatrix::zeros(n, active.len());
    for (k, &i) in active.iter().enumerate() {
        b.column_mut(k).copy_from(&(phi.column(i) * gamma[i].sqrt()));
    }
    let mut sigma = &b * b.transpose();
    for i in 0..n {
        sigma[(i, i)] += noise;
    }
    sigma
}

pub(crate) fn factor_sigma(phi: &DMatrix<f64>, gamma: &DVector<f64>, noise: f64) -> Result<SpdFactor> {
    SpdFactor::new(sigma_matrix(phi, gamma, noise))
}

/// Factorizes `Sigma_y`. Fails with `NotPositiveDefinite` when `lambda = 0`
/// and `Phi Gamma Phi^T` is singular.
pub fn sigma_y_factor(dict: &Dictionary, hyp: &HyperState) -> Result<SpdFactor> {
    check_hyp(dict, hyp)?;
    factor_sigma(dict.matrix(), &hyp.gamma, hyp.lambda)
}

fn check_hyp(dict: &Dictionary, hyp: &HyperState) -> Result<()> {
    if hyp.gamma.len() != dict.ncols() {
        return Err(Error::Dimension(format!(
            "gamma has length {} but dictionary has {} columns",
            hyp.gamma.len(),
            dict.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn posterior_mean_raw(
    phi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    noise: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = phi.ncols();
    if gamma.iter().all(|&g| g == 0.0) {
        return Ok(DVector::zeros(m));
    }
    let factor = factor_sigma(phi, gamma, noise)?;
    let w = factor.solve(y);
    let mut x = DVector::zeros(m);
    for i in 0..m {
        if gamma[i] > 0.0 {
            x[i] = gamma[i] * phi.column(i).dot(&w);
        }
    }
    Ok(x)
}

/// Posterior mean `Gamma Phi^T Sigma_y^{-1} y`; coefficients with `gamma_i = 0`
/// are exactly zero.
pub fn posterior_mean(dict: &Dictionary, hyp: &HyperState, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_hyp(dict, hyp)?;
    dict.check_signal(y)?;
    posterior_mean_raw(dict.matrix(), &hyp.gamma, hyp.lambda, y)
}

/// `y^T Sigma_y^{-1} y`, equal to `min_x ||y - Phi x||^2 / lambda + x^T Gamma^{-1} x`.
pub fn dual_data_fit(dict: &Dictionary, hyp: &HyperState, y: &DVector<f64>) -> Result<f64> {
    if !(hyp.lambda > 0.0) {
        return Err(Error::Config("dual data fit requires lambda > 0".into()));
    }
    dict.check_signal(y)?;
    let factor = sigma_y_factor(dict, hyp)?;
    Ok(y.dot(&factor.solve(y)))
}

/// Posterior quantities restricted to the active set `gamma_i > threshold`.
#[derive(Debug, Clone)]
pub(crate) struct Posterior {
    pub factor: SpdFactor,
    /// Posterior mean, zero off the active set.
    pub mean: DVector<f64>,
    /// Diagonal of the posterior covariance, zero off the active set.
    pub s_diag: DVector<f64>,
    /// `phi_i^T Sigma_y^{-1} phi_i` for every column.
    pub z: DVector<f64>,
    /// `y^T Sigma_y^{-1} y`.
    pub fit: f64,
}

impl Posterior {
    pub fn compute(
        phi: &DMatrix<f64>,
        gamma: &DVector<f64>,
        noise: f64,
        y: &DVector<f64>,
    ) -> Result<Self> {
        let m = phi.ncols();
        let factor = factor_sigma(phi, gamma, noise)?;
        let w = factor.solve(y);
        let sphi = factor.solve_matrix(phi);
        let mut mean = DVector::zeros(m);
        let mut s_diag = DVector::zeros(m);
        let mut z = DVector::zeros(m);
        for i in 0..m {
            let col = phi.column(i);
            z[i] = col.dot(&sphi.column(i));
            if gamma[i] > 0.0 {
                mean[i] = gamma[i] * col.dot(&w);
                s_diag[i] = gamma[i] - gamma[i] * gamma[i] * z[i];
            }
        }
        let fit = y.dot(&w);
        Ok(Self { factor, mean, s_diag, z, fit })
    }
}
