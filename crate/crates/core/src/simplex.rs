//! Dense revised simplex for small standard-form linear programs
//! `min c^T x  s.t.  A x = b, x >= 0`, used to finish weighted-l1 solves
//! exactly when the splitting iterations stall.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Switch from Dantzig pricing to Bland's rule after this many degenerate pivots.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `A x = b`: `A^T dual <= c` at optimality.
    pub dual: DVector<f64>,
}

struct Iterate {
    xb: DVector<f64>,
    dual: DVector<f64>,
}

fn factor(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, basis: &[usize]) -> Result<Iterate> {
    let bm = a.select_columns(basis.iter());
    let cb = DVector::from_iterator(basis.len(), basis.iter().map(|&j| c[j]));
    let xb = bm.clone().lu().solve(b).ok_or_else(|| Error::SingularSystem("simplex basis is singular".into()))?;
    let dual = bm
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::SingularSystem("simplex basis is singular".into()))?;
    Ok(Iterate { xb, dual })
}

/// Runs simplex pivots over the first `allowed` columns from a feasible basis.
fn pivot_loop(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    basis: &mut [usize],
    allowed: usize,
    max_pivots: usize,
) -> Result<Iterate> {
    let cscale = c.amax().max(1.0);
    let dtol = 1e-11 * cscale;
    let mut streak = 0;
    for _ in 0..max_pivots {
        let it = factor(a, b, c, basis)?;
        let reduced = |j: usize| c[j] - a.column(j).dot(&it.dual);
        let candidates = (0..allowed).filter(|j| !basis.contains(j));
        let entering = if streak >= DEGENERATE_STREAK {
            candidates.into_iter().find(|&j| reduced(j) < -dtol)
        } else {
            candidates
                .map(|j| (j, reduced(j) / a.column(j).norm().max(f64::MIN_POSITIVE)))
                .filter(|&(j, _)| reduced(j) < -dtol)
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .map(|(j, _)| j)
        };
        let Some(j) = entering else {
            return Ok(it);
        };
        let bm = a.select_columns(basis.iter());
        let dir = bm.lu().solve(&a.column(j).into_owned()).ok_or_else(|| Error::SingularSystem("simplex basis is singular".into()))?;
        let ptol = 1e-10 * dir.amax().max(1.0);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..basis.len() {
            if dir[i] > ptol {
                let t = it.xb[i].max(0.0) / dir[i];
                let better = match leave {
                    None => true,
                    Some((k, best)) => t < best || (t == best && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, t));
                }
            }
        }
        let Some((i, t)) = leave else {
            return Err(Error::Config("linear program is unbounded".into()));
        };
        streak = if t <= 1e-14 { streak + 1 } else { 0 };
        basis[i] = j;
    }
    Err(Error::NonConvergence { what: "simplex", iterations: max_pivots })
}

/// Solves `min c^T x s.t. A x = b, x >= 0` for `A` of full row rank.
pub(crate) fn solve_standard_form(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, max_pivots: usize) -> Result<LpSolution> {
    let (r, m) = a.shape();
    // phase 1 on [A | I] with sign-flipped rows so that the artificials start feasible
    let sign = DVector::from_fn(r, |i, _| if b[i] < 0.0 { -1.0 } else { 1.0 });
    let mut a1 = DMatrix::zeros(r, m + r);
    for i in 0..r {
        for j in 0..m {
            a1[(i, j)] = sign[i] * a[(i, j)];
        }
        a1[(i, m + i)] = 1.0;
    }
    let b1 = b.component_mul(&sign);
    let c1 = DVector::from_fn(m + r, |j, _| if j < m { 0.0 } else { 1.0 });
    let mut basis: Vec<usize> = (m..m + r).collect();
    let it = pivot_loop(&a1, &b1, &c1, &mut basis, m + r, max_pivots)?;
    let infeasibility: f64 = basis.iter().zip(it.xb.iter()).filter(|(&j, _)| j >= m).map(|(_, v)| v.abs()).sum();
    if infeasibility > 1e-9 * b.amax().max(1.0) {
        return Err(Error::InfeasibleConstraint { residual: infeasibility / b.norm().max(f64::MIN_POSITIVE) });
    }
    // drive zero-level artificials out of the basis
    for i in 0..r {
        if basis[i] < m {
            continue;
        }
        let mut row = DVector::zeros(r);
        row[i] = 1.0;
        // row i of B^{-1} A_j is e_i^T B^{-1} A_j = (B^{-T} e_i)^T A_j
        let t = a1.select_columns(basis.iter()).transpose().lu().solve(&row).ok_or_else(|| Error::SingularSystem("simplex basis is singular".into()))?;
        let swap = (0..m)
            .filter(|j| !basis.contains(j))
            .map(|j| (j, a1.column(j).dot(&t).abs()))
            .max_by(|p, q| p.1.total_cmp(&q.1));
        match swap {
            Some((j, v)) if v > 1e-9 => basis[i] = j,
            _ => return Err(Error::SingularSystem("constraint rows are linearly dependent".into())),
        }
    }
    let c2 = DVector::from_fn(m + r, |j, _| if j < m { c[j] } else { 0.0 });
    let it = pivot_loop(&a1, &b1, &c2, &mut basis, m, max_pivots)?;
    let mut x = DVector::zeros(m);
    for (k, &j) in basis.iter().enumerate() {
        x[j] = it.xb[k].max(0.0);
    }
    Ok(LpSolution { dual: it.dual.component_mul(&sign), x })
}
