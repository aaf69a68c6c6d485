use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dictionary::Dictionary;
use crate::model::HyperState;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| r.sample(StandardNormal))
}

pub fn gaussian_dict(r: &mut ChaCha8Rng, n: usize, m: usize) -> Dictionary {
    Dictionary::gaussian(n, m, r).unwrap()
}

/// Random dictionary, strictly positive gamma, `lambda` as given, Gaussian signal.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, m: usize, lambda: f64) -> (Dictionary, HyperState, DVector<f64>) {
    let d = gaussian_dict(r, n, m);
    let gamma = DVector::from_fn(m, |_, _| (r.random::<f64>() * 3.0 - 1.5).exp());
    let y = normal_vec(r, n);
    (d, HyperState::new(gamma, lambda).unwrap(), y)
}

pub fn scalar_dict() -> Dictionary {
    Dictionary::new(DMatrix::from_element(1, 1, 1.0)).unwrap()
}
