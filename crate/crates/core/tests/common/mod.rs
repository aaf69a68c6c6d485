//! Seeded instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_duality::classifier::{sigmoid, LabeledDesign};
use sparse_duality::{Dictionary, HyperState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

pub fn gaussian_dict(r: &mut ChaCha8Rng, n: usize, m: usize) -> Dictionary {
    Dictionary::gaussian(n, m, r).unwrap()
}

/// Dictionary, positive hyperparameters and a signal.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, m: usize, lambda: f64) -> (Dictionary, HyperState, DVector<f64>) {
    let d = gaussian_dict(r, n, m);
    let gamma = DVector::from_fn(m, |_, _| (r.random::<f64>() * 4.0 - 2.0).exp());
    let y = normal_vec(r, n);
    (d, HyperState::new(gamma, lambda).unwrap(), y)
}

/// Sparse signal with `k` unit Gaussian nonzeros on random positions.
pub fn sparse_vec(r: &mut ChaCha8Rng, m: usize, k: usize) -> DVector<f64> {
    let mut x = DVector::zeros(m);
    for i in rand::seq::index::sample(r, m, k) {
        x[i] = r.sample::<f64, _>(StandardNormal);
    }
    x
}

/// Minimum of `f` on `points` evenly spaced values in `[lo, hi]`: `(value, argmin)`.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, lo);
    for k in 0..points {
        let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let v = f(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    best
}

/// All `k`-subsets of `0..m` in lexicographic order.
pub fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > m {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// `min sum w_i |x_i| s.t. Phi x = y` by enumerating basic solutions: for a
/// full-row-rank `Phi`, an optimum is supported on `n` linearly independent columns.
pub fn lp_vertex_oracle(phi: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> (f64, DVector<f64>) {
    let (n, m) = phi.shape();
    let mut best = (f64::INFINITY, DVector::zeros(m));
    for s in subsets(m, n) {
        let sub = phi.select_columns(s.iter());
        let sv = sub.clone().singular_values();
        if sv.min() < 1e-10 * sv.max() {
            continue;
        }
        let xs = sub.lu().solve(y).unwrap();
        let obj: f64 = s.iter().zip(xs.iter()).map(|(&i, v)| w[i] * v.abs()).sum();
        if obj < best.0 {
            let mut x = DVector::zeros(m);
            for (&i, v) in s.iter().zip(xs.iter()) {
                x[i] = *v;
            }
            best = (obj, x);
        }
    }
    best
}

/// Supports of size `k` that reproduce `y` exactly.
pub fn exact_supports(phi: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Vec<Vec<usize>> {
    subsets(phi.ncols(), k)
        .into_iter()
        .filter(|s| {
            let sub = phi.select_columns(s.iter());
            let xs = sub.clone().svd(true, true).solve(y, 1e-12).unwrap();
            (y - sub * xs).norm() <= 1e-9 * y.norm()
        })
        .collect()
}

/// `sum_j log(1 + e^{t_j}) - y_j t_j` evaluated term by term without tricks.
pub fn naive_nll(design: &LabeledDesign, x: &DVector<f64>) -> f64 {
    let t = &design.phi * x;
    (0..t.len())
        .map(|j| {
            let s = 1.0 / (1.0 + (-t[j]).exp());
            -(design.labels[j] * s.ln() + (1.0 - design.labels[j]) * (1.0 - s).ln())
        })
        .sum()
}

/// Unregularized logistic MLE by damped Newton iterations.
pub fn newton_logistic(design: &LabeledDesign) -> DVector<f64> {
    let phi = &design.phi;
    let mut x = DVector::zeros(phi.ncols());
    for _ in 0..100 {
        let t = phi * &x;
        let p = t.map(sigmoid);
        let grad = phi.transpose() * (&p - &design.labels);
        let wdiag = p.map(|q| q * (1.0 - q));
        let mut h = phi.transpose() * DMatrix::from_diagonal(&wdiag) * phi;
        h += DMatrix::identity(phi.ncols(), phi.ncols()) * 1e-14;
        let step = h.cholesky().unwrap().solve(&grad);
        x -= step;
        if grad.amax() < 1e-13 {
            break;
        }
    }
    x
}

/// Logistic toy: Gaussian design, labels drawn from a strong Gaussian truth,
/// with both classes forced present.
pub fn logistic_toy(seed: u64, n: usize, m: usize) -> LabeledDesign {
    let mut r = rng(seed);
    let phi = DMatrix::from_fn(n, m, |_, _| r.sample::<f64, _>(StandardNormal));
    let truth = normal_vec(&mut r, m) * 2.0;
    let t = &phi * truth;
    let mut labels = DVector::from_fn(n, |j, _| if r.random::<f64>() < sigmoid(t[j]) { 1.0 } else { 0.0 });
    labels[0] = 1.0;
    labels[1] = 0.0;
    LabeledDesign::new(phi, labels).unwrap()
}
