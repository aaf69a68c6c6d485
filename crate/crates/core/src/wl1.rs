//! Weighted l1 programs: basis pursuit `min sum w_i |x_i| s.t. Phi x = y`
//! (ADMM with a duality-gap certificate and support polish) and the weighted
//! lasso `min ||y - Phi x||^2 + lambda sum w_i |x_i|` (coordinate descent).

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::pinv_solve;

/// Relative range residual above which an equality problem is infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Wl1Mode {
    Equality,
    Penalized { lambda: f64 },
}

#[derive(Debug, Clone)]
pub struct Wl1Problem<'a> {
    pub phi: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub weights: DVector<f64>,
    pub mode: Wl1Mode,
}

impl<'a> Wl1Problem<'a> {
    pub fn new(dict: &'a Dictionary, y: &'a DVector<f64>, weights: DVector<f64>, mode: Wl1Mode) -> Result<Self> {
        Self::from_matrix(dict.matrix(), y, weights, mode)
    }

    pub fn from_matrix(phi: &'a DMatrix<f64>, y: &'a DVector<f64>, weights: DVector<f64>, mode: Wl1Mode) -> Result<Self> {
        if y.len() != phi.nrows() || weights.len() != phi.ncols() {
            return Err(Error::Dimension(format!(
                "weighted l1 problem: Phi is {}x{}, y has {}, weights have {}",
                phi.nrows(),
                phi.ncols(),
                y.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("weights must be positive and finite".into()));
        }
        if let Wl1Mode::Penalized { lambda } = mode {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Config(format!("penalized mode needs lambda > 0, got {lambda}")));
            }
        }
        Ok(Self { phi, y, weights, mode })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let l1: f64 = self.weights.iter().zip(x.iter()).map(|(w, v)| w * v.abs()).sum();
        match self.mode {
            Wl1Mode::Equality => l1,
            Wl1Mode::Penalized { lambda } => (self.y - self.phi * x).norm_squared() + lambda * l1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Wl1Options {
    /// Equality mode: target `gap <= tol (1 + |objective|)`.
    pub tol: f64,
    /// Penalized mode: target subgradient residual, relative to `max(1, ||2 Phi^T y||_inf)`.
    pub kkt_tol: f64,
    pub max_iters: usize,
}

impl Default for Wl1Options {
    fn default() -> Self {
        Self { tol: 1e-6, kkt_tol: 1e-8, max_iters: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wl1Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Primal objective minus the best certified dual bound.
    pub duality_gap: f64,
    /// Largest violation of the optimality conditions.
    pub kkt_residual: f64,
    /// Equality mode: dual vector `nu` with `|phi_i^T nu| <= w_i`.
    /// Penalized mode: the scaled residual `theta` with `|2 phi_i^T theta| <= lambda w_i`.
    pub dual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the program; fails with `NonConvergence` when the optimality
/// target is not met within `max_iters`.
pub fn solve_wl1(prob: &Wl1Problem, tol: f64, max_iters: usize) -> Result<Wl1Solution> {
    let opts = Wl1Options { tol, max_iters, ..Default::default() };
    let sol = solve_wl1_report(prob, &opts, None)?;
    if !sol.converged {
        return Err(Error::NonConvergence { what: "weighted l1", iterations: sol.iterations });
    }
    Ok(sol)
}

/// Like [`solve_wl1`] but returns the best iterate even when the target is missed.
pub fn solve_wl1_report(prob: &Wl1Problem, opts: &Wl1Options, warm: Option<&DVector<f64>>) -> Result<Wl1Solution> {
    if !(opts.tol > 0.0 && opts.kkt_tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::Config(format!("invalid weighted l1 options {opts:?}")));
    }
    if let Some(w) = warm {
        if w.len() != prob.phi.ncols() {
            return Err(Error::Dimension("warm start has the wrong length".into()));
        }
    }
    match prob.mode {
        Wl1Mode::Equality => basis_pursuit(prob, opts, warm),
        Wl1Mode::Penalized { lambda } => lasso_cd(prob, lambda, opts, warm),
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Thin SVD pieces of `Phi` restricted to its numerical rank.
struct RangeBasis {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl RangeBasis {
    fn new(phi: &DMatrix<f64>) -> Result<Self> {
        let svd = SVD::new(phi.clone(), true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(Error::SingularSystem("SVD failed".into())),
        };
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-12 * smax)
            .collect();
        let u = u.select_columns(&keep);
        let v = vt.transpose().select_columns(&keep);
        let s = DVector::from_iterator(keep.len(), keep.iter().map(|&k| svd.singular_values[k]));
        Ok(Self { u, s, v })
    }

    /// `Phi^+ b`.
    fn pinv(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.transpose() * b;
        c.component_div_assign(&self.s);
        &self.v * c
    }

    /// Least-squares solution of `Phi^T nu = g`.
    fn pinv_t(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut c = self.v.transpose() * g;
        c.component_div_assign(&self.s);
        &self.u * c
    }

    /// Projection onto `{x : Phi x = y}` given `x_p = Phi^+ y`.
    fn project(&self, v: &DVector<f64>, xp: &DVector<f64>) -> DVector<f64> {
        let c = self.v.transpose() * v;
        v - &self.v * c + xp
    }
}

/// Ratio `max_i |phi_i^T nu| / w_i`.
fn dual_violation(phi: &DMatrix<f64>, w: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    let c = phi.transpose() * nu;
    c.iter().zip(w.iter()).fold(0.0f64, |a, (ci, wi)| a.max(ci.abs() / wi))
}

struct Certificate {
    best_x: DVector<f64>,
    best_primal: f64,
    best_nu: DVector<f64>,
    best_dual: f64,
}

impl Certificate {
    fn offer_primal(&mut self, x: DVector<f64>, obj: f64) {
        if obj < self.best_primal {
            self.best_primal = obj;
            self.best_x = x;
        }
    }

    fn offer_dual(&mut self, phi: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>, mut nu: DVector<f64>) {
        let t = dual_violation(phi, w, &nu);
        if t > 1.0 {
            nu /= t;
        }
        let d = y.dot(&nu);
        if d > self.best_dual {
            self.best_dual = d;
            self.best_nu = nu;
        }
    }

    fn gap(&self) -> f64 {
        self.best_primal - self.best_dual
    }
}

/// Least squares on the support of `z` (minimum-norm when rank deficient),
/// plus the dual vector pinned to the support's subgradient conditions.
fn polish(
    prob: &Wl1Problem,
    support: &[usize],
    nu: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let phi = prob.phi;
    let n = phi.nrows();
    if support.is_empty() || support.len() > n {
        return None;
    }
    let ps = phi.select_columns(support);
    let xs = pinv_solve(&ps, prob.y, 1e-12).ok()?;
    let resid = (prob.y - &ps * &xs).norm();
    if resid > 1e-10 * prob.y.norm() {
        return None;
    }
    let mut x = DVector::zeros(phi.ncols());
    for (k, &i) in support.iter().enumerate() {
        x[i] = xs[k];
    }
    // nu + Phi_S (Phi_S^T Phi_S)^+ (c - Phi_S^T nu) with c = w_S sign(x_S)
    let c = DVector::from_iterator(
        support.len(),
        support.iter().zip(xs.iter()).map(|(&i, v)| prob.weights[i] * v.signum()),
    );
    let gs = ps.transpose() * &ps;
    let corr = pinv_solve(&gs, &(c - ps.transpose() * nu), 1e-12).ok()?;
    let pinned = nu + &ps * corr;
    Some((x, pinned))
}

fn basis_pursuit(prob: &Wl1Problem, opts: &Wl1Options, warm: Option<&DVector<f64>>) -> Result<Wl1Solution> {
    let phi = prob.phi;
    let y = prob.y;
    let w = &prob.weights;
    let m = phi.ncols();
    let ynorm = y.norm();
    if ynorm == 0.0 {
        return Ok(Wl1Solution {
            x: DVector::zeros(m),
            objective: 0.0,
            duality_gap: 0.0,
            kkt_residual: 0.0,
            dual: DVector::zeros(phi.nrows()),
            iterations: 0,
            converged: true,
        });
    }
    let basis = RangeBasis::new(phi)?;
    let range_resid = (y - &basis.u * (basis.u.transpose() * y)).norm() / ynorm;
    if range_resid > FEASIBILITY_TOL {
        return Err(Error::InfeasibleConstraint { residual: range_resid });
    }
    let xp = basis.pinv(y);

    let mut cert = Certificate {
        best_primal: prob.objective(&xp),
        best_x: xp.clone(),
        best_nu: DVector::zeros(phi.nrows()),
        best_dual: 0.0,
    };
    let mut z = match warm {
        Some(v) => basis.project(v, &xp),
        None => xp.clone(),
    };
    cert.offer_primal(z.clone(), prob.objective(&z));
    let mut u = DVector::<f64>::zeros(m);
    let wmean = w.mean();
    let mut rho = wmean * (m as f64).sqrt() / xp.norm().max(f64::MIN_POSITIVE);
    const RELAX: f64 = 1.6;
    const CHECK_EVERY: usize = 10;
    // give up on the splitting when the gap has not halved over this many iterations
    const STALL_WINDOW: usize = 2000;
    let mut last_support: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let target = |c: &Certificate| c.gap() <= opts.tol * (1.0 + c.best_primal.abs());
    let mut done = false;
    // (iteration, gap) at the last progress check
    let mut mark = (0, f64::INFINITY);
    while iterations < opts.max_iters {
        iterations += 1;
        let x = basis.project(&(&z - &u), &xp);
        let xh = &x * RELAX + &z * (1.0 - RELAX);
        let z_old = std::mem::replace(&mut z, DVector::zeros(m));
        let arg = &xh + &u;
        for i in 0..m {
            z[i] = soft(arg[i], w[i] / rho);
        }
        u += &xh - &z;

        if iterations % CHECK_EVERY == 0 {
            let r = (&x - &z).norm();
            let s = rho * (&z - &z_old).norm();
            let nu = basis.pinv_t(&(&u * rho));
            let candidate = basis.project(&z, &xp);
            let obj = prob.objective(&candidate);
            cert.offer_primal(candidate, obj);
            cert.offer_dual(phi, w, y, nu.clone());

            let support: Vec<usize> = (0..m).filter(|&i| z[i] != 0.0).collect();
            if support != last_support || iterations % (20 * CHECK_EVERY) == 0 {
                if let Some((xs, pinned)) = polish(prob, &support, &nu) {
                    let obj = prob.objective(&xs);
                    cert.offer_primal(xs, obj);
                    cert.offer_dual(phi, w, y, pinned);
                }
                last_support = support;
            }
            if target(&cert) {
                done = true;
                break;
            }
            if iterations - mark.0 >= STALL_WINDOW {
                if cert.gap() > 0.5 * mark.1 {
                    log::debug!("splitting stalled at gap {:e} after {iterations} iterations", cert.gap());
                    break;
                }
                mark = (iterations, cert.gap());
            }
            // residual balancing
            if r > 10.0 * s {
                rho *= 2.0;
                u /= 2.0;
            } else if s > 10.0 * r {
                rho /= 2.0;
                u *= 2.0;
            }
        }
    }
    if !done {
        // the splitting can crawl when columns are nearly parallel; finish on a vertex
        match vertex_refine(prob, &basis) {
            Ok((xv, nu)) => {
                if (y - phi * &xv).norm() <= FEASIBILITY_TOL * ynorm {
                    let obj = prob.objective(&xv);
                    cert.offer_primal(xv, obj);
                }
                cert.offer_dual(phi, w, y, nu);
                done = target(&cert);
            }
            Err(e) => log::debug!("vertex refinement failed: {e}"),
        }
    }
    let x = cert.best_x.clone();
    let kkt_residual = (dual_violation(phi, w, &cert.best_nu) - 1.0).max(0.0);
    Ok(Wl1Solution {
        objective: cert.best_primal,
        duality_gap: cert.gap().max(0.0),
        kkt_residual,
        dual: cert.best_nu,
        x,
        iterations,
        converged: done,
    })
}

/// Exact solution of the program as a linear program over the split
/// `x = p - q`, with constraints expressed in the range basis so that the
/// rows have full rank. Returns the solution and its dual vector.
fn vertex_refine(prob: &Wl1Problem, basis: &RangeBasis) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = prob.phi.ncols();
    let reduced = basis.v.transpose();
    let mut a = DMatrix::zeros(reduced.nrows(), 2 * m);
    for k in 0..reduced.nrows() {
        for j in 0..m {
            let v = basis.s[k] * reduced[(k, j)];
            a[(k, j)] = v;
            a[(k, m + j)] = -v;
        }
    }
    let b = basis.u.transpose() * prob.y;
    let c = DVector::from_fn(2 * m, |j, _| prob.weights[j % m]);
    let lp = crate::simplex::solve_standard_form(&a, &b, &c, 50 * (2 * m + b.len()))?;
    let x = DVector::from_fn(m, |j, _| lp.x[j] - lp.x[m + j]);
    Ok((x, &basis.u * lp.dual))
}

struct LassoState<'a> {
    gram: DMatrix<f64>,
    c: DVector<f64>,
    w: &'a DVector<f64>,
    lambda: f64,
    rows: usize,
}

impl LassoState<'_> {
    /// Largest violation of `0 in 2 (G x - c) + lambda w sign(x)`.
    fn kkt(&self, x: &DVector<f64>, gx: &DVector<f64>) -> f64 {
        (0..x.len()).fold(0.0f64, |acc, i| {
            let g = 2.0 * (gx[i] - self.c[i]);
            let t = self.lambda * self.w[i];
            let v = if x[i] != 0.0 { (g + t * x[i].signum()).abs() } else { (g.abs() - t).max(0.0) };
            acc.max(v)
        })
    }

    /// Solves the support's stationarity equations under the current signs.
    fn polish(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
        if support.is_empty() || support.len() > self.rows {
            return None;
        }
        let k = support.len();
        let a = DMatrix::from_fn(k, k, |r, s| self.gram[(support[r], support[s])]);
        let b = DVector::from_fn(k, |r, _| {
            let i = support[r];
            self.c[i] - 0.5 * self.lambda * self.w[i] * x[i].signum()
        });
        let xs = a.cholesky()?.solve(&b);
        let mut out = DVector::zeros(x.len());
        for (r, &i) in support.iter().enumerate() {
            if xs[r].signum() != x[i].signum() {
                return None;
            }
            out[i] = xs[r];
        }
        Some(out)
    }
}

fn lasso_cd(prob: &Wl1Problem, lambda: f64, opts: &Wl1Options, warm: Option<&DVector<f64>>) -> Result<Wl1Solution> {
    let phi = prob.phi;
    let m = phi.ncols();
    let mut st = LassoState { gram: phi.transpose() * phi, c: phi.transpose() * prob.y, w: &prob.weights, lambda, rows: phi.nrows() };
    let scale = (2.0 * st.c.amax()).max(1.0);
    let tol = opts.kkt_tol * scale;
    // Cold starts follow a decreasing lambda path from the all-zero threshold;
    // plain coordinate descent needs O(1/lambda) sweeps otherwise.
    let lambda_max = (0..m).fold(0.0f64, |a, i| a.max(2.0 * st.c[i].abs() / st.w[i]));
    let mut stages = Vec::new();
    if warm.is_none() {
        let mut l = lambda_max * 0.1;
        while l > lambda {
            stages.push(l);
            l *= 0.1;
        }
    }
    stages.push(lambda);
    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(m));
    let mut gx = &st.gram * &x;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    for &stage in &stages {
        st.lambda = stage;
        kkt = st.kkt(&x, &gx);
        converged = kkt <= tol;
        while !converged && iterations < opts.max_iters {
            iterations += 1;
            for i in 0..m {
                let gii = st.gram[(i, i)];
                if gii <= 0.0 {
                    continue;
                }
                let r = st.c[i] - gx[i] + gii * x[i];
                let next = soft(r, 0.5 * stage * st.w[i]) / gii;
                let delta = next - x[i];
                if delta != 0.0 {
                    gx.axpy(delta, &st.gram.column(i), 1.0);
                    x[i] = next;
                }
            }
            kkt = st.kkt(&x, &gx);
            if kkt > tol && iterations % 5 == 0 {
                if let Some(p) = st.polish(&x) {
                    let gp = &st.gram * &p;
                    let kp = st.kkt(&p, &gp);
                    if kp < kkt {
                        x = p;
                        gx = gp;
                        kkt = kp;
                    }
                }
            }
            converged = kkt <= tol;
        }
    }
    // dual point: residual scaled into |2 phi_i^T theta| <= lambda w_i
    let resid = prob.y - phi * &x;
    let corr = phi.transpose() * &resid;
    let t = (0..m).fold(0.0f64, |a, i| a.max(2.0 * corr[i].abs() / (lambda * st.w[i])));
    let theta = if t > 1.0 { &resid / t } else { resid };
    let dual = 2.0 * theta.dot(prob.y) - theta.norm_squared();
    let objective = prob.objective(&x);
    Ok(Wl1Solution {
        x,
        objective,
        duality_gap: (objective - dual).max(0.0),
        kkt_residual: kkt,
        dual: theta,
        iterations,
        converged,
    })
}
