//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::model::SpdFactor;

/// Solves `min ||y - Phi x||^2 + lambda sum_i x_i^2 / gamma_i` where `gamma_i = 0`
/// pins `x_i = 0`. Uses the `|A| x |A|` normal equations when the active set is
/// no larger than `n`, the `n x n` dual form otherwise.
pub(crate) fn weighted_ridge(
    phi: &DMatrix<f64>,
    gram: Option<&DMatrix<f64>>,
    phit_y: Option<&DVector<f64>>,
    y: &DVector<f64>,
    lambda: f64,
    gamma: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, m) = phi.shape();
    let active: Vec<usize> = (0..m).filter(|&i| gamma[i] > 0.0).collect();
    let mut x = DVector::zeros(m);
    if active.is_empty() {
        return Ok(x);
    }
    if active.len() <= n {
        let k = active.len();
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (r, &i) in active.iter().enumerate() {
            b[r] = match phit_y {
                Some(v) => v[i],
                None => phi.column(i).dot(y),
            };
            for (c, &j) in active.iter().enumerate().skip(r) {
                let v = match gram {
                    Some(g) => g[(i, j)],
                    None => phi.column(i).dot(&phi.column(j)),
                };
                a[(r, c)] = v;
                a[(c, r)] = v;
            }
            a[(r, r)] += lambda / gamma[i];
        }
        let xs = match SpdFactor::new(a.clone()) {
            Ok(f) => f.solve(&b),
            // lambda -> 0 with dependent active columns: least-norm fallback
            Err(_) => pinv_solve(&a, &b, 1e-13)?,
        };
        for (r, &i) in active.iter().enumerate() {
            x[i] = xs[r];
        }
    } else {
        let w = crate::model::posterior_mean_raw(phi, gamma, lambda, y)?;
        x = w;
    }
    Ok(x)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |x, &y| x.max(y));
    if smax == 0.0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    svd.solve(b, rcond * smax)
        .map_err(|e| Error::SingularSystem(e.to_string()))
}

/// Minimum-norm least-squares solution of `phi x = y` (`x = phi^+ y`).
pub(crate) fn min_norm_solution(phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    pinv_solve(phi, y, 1e-12)
}
