use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of an iterative solver.
///
/// `objective_trace[k]` is the objective after `k` iterations, so the trace
/// always holds `iterations + 1` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_hat: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    /// Converts a non-converged report into [`Error::NonConvergence`].
    pub fn ensure_converged(self, what: &'static str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { what, iterations: self.iterations })
        }
    }

    /// Number of entries with `|x_i| > rel * max_j |x_j|`.
    pub fn support_size(&self, rel: f64) -> usize {
        count_nonzero(&self.x_hat, rel)
    }
}

pub fn count_nonzero(x: &DVector<f64>, rel: f64) -> usize {
    let max = x.amax();
    if max == 0.0 {
        return 0;
    }
    x.iter().filter(|v| v.abs() > rel * max).count()
}

/// True when no entry of `trace` exceeds its predecessor by more than `slack`.
pub fn is_non_increasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}
