//! Sparse linear-model estimation in the Type I (MAP) and Type II (empirical
//! Bayes) families, with the shared covariance algebra, lambda learning, a
//! weighted-l1 engine, sparse logistic classification and benchmark harnesses.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod classifier;
pub mod dictionary;
pub mod error;
pub mod gpenalty;
pub mod io;
pub mod lambda;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod report;
mod simplex;
pub mod type1;
pub mod type2;
pub mod wl1;

#[cfg(test)]
mod testutil;

pub use dictionary::Dictionary;
pub use error::{Error, Result};
pub use gpenalty::{check_gamma_concavity, g2_penalty, ConcavityReport};
pub use model::{dual_data_fit, posterior_mean, sigma_y_factor, HyperState, SpdFactor};
pub use penalty::PenaltyFamily;
pub use report::SolveReport;
pub use type1::{solve_type1, Type1Options};
pub use type2::{solve_type2, solve_type2_noiseless, AlphaSchedule, Type2Options, UpdateRule};
pub use wl1::{solve_wl1, Wl1Mode, Wl1Options, Wl1Problem, Wl1Solution};
