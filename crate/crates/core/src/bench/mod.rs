//! Seeded, parallel benchmark harnesses: the lambda sweep for Type I
//! estimators and exact recovery on clustered dictionaries.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, trial)`, and
//! per-trial results are aggregated in trial order, so outputs do not depend
//! on the number of worker threads.

mod clustered;
mod manifest;
mod sweep;

pub use clustered::{
    check_non_cancellation, gen_clustered_dictionary, intra_cluster_angles, plant_clustered, run_recovery_experiment,
    ClusterSpec, RecoveryConfig, RecoveryResult, RecoveryTrial,
};
pub use manifest::{canonical_json, config_hash, RunManifest, Timing};
pub use sweep::{
    default_lambda_grid, draw_instance, normalized_mse, run_lambda_sweep, ExperimentConfig, LearnedRow, SweepResult, SweepRow,
    L0_THRESHOLD,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Independent stream for one trial.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs `f` on every trial index with at most `jobs` threads, returning the
/// results in index order.
pub(crate) fn par_trials<T, F>(trials: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| (0..trials).into_par_iter().map(&f).collect())
}

/// Shortest round-trip decimal form, so CSV bytes are reproducible.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
