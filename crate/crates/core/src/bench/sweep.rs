//! Fixed-lambda sweep of the Type I estimator against learned lambda.

use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fmt_f64, par_trials, trial_rng};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::lambda::{learn_lambda_type1, LambdaOptions};
use crate::penalty::PenaltyFamily;
use crate::report::count_nonzero;
use crate::type1::{solve_type1, Type1Options};

/// Relative threshold for counting nonzero coefficients.
pub const L0_THRESHOLD: f64 = 1e-6;

/// 50 log-spaced points over `[1e-4, 10]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi, k) = (-4.0f64, 1.0f64, 50);
    (0..k).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (k - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_k0")]
    pub k0: usize,
    /// `null` runs noiseless trials.
    #[serde(default = "default_snr")]
    pub snr_db: Option<f64>,
    /// `null` uses [`default_lambda_grid`].
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_penalties")]
    pub penalties: Vec<PenaltyFamily>,
    pub seed: u64,
    #[serde(default)]
    pub type1: Type1Options,
    #[serde(default)]
    pub lambda: LambdaOptions,
}

fn default_n() -> usize {
    100
}
fn default_m() -> usize {
    50
}
fn default_k0() -> usize {
    10
}
fn default_snr() -> Option<f64> {
    Some(0.0)
}
fn default_trials() -> usize {
    100
}
fn default_penalties() -> Vec<PenaltyFamily> {
    vec![PenaltyFamily::LpNorm { p: 0.01 }, PenaltyFamily::LpNorm { p: 1.0 }]
}

impl ExperimentConfig {
    /// Defaults everywhere except the mandatory seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n: default_n(),
            m: default_m(),
            k0: default_k0(),
            snr_db: default_snr(),
            lambda_grid: None,
            trials: default_trials(),
            penalties: default_penalties(),
            seed,
            type1: Type1Options::default(),
            lambda: LambdaOptions::default(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if self.k0 == 0 || self.k0 > self.m {
            return Err(Error::Config(format!("k0 must lie in 1..={}, got {}", self.m, self.k0)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config(format!("snr_db must be finite or null, got {snr}")));
            }
        }
        let grid = self.grid();
        if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambda_grid must hold positive finite values".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lambda_grid must be strictly increasing".into()));
        }
        if self.penalties.is_empty() {
            return Err(Error::Config("penalties must not be empty".into()));
        }
        for p in &self.penalties {
            p.validate()?;
        }
        self.type1.validate()?;
        self.lambda.validate()
    }
}

/// One trial: a fresh Gaussian dictionary, `k0` unit Gaussian nonzeros and
/// noise scaled to hit the SNR exactly.
pub fn draw_instance(cfg: &ExperimentConfig, trial: usize) -> Result<(Dictionary, DVector<f64>, DVector<f64>)> {
    let mut rng = trial_rng(cfg.seed, trial);
    let dict = Dictionary::gaussian(cfg.n, cfg.m, &mut rng)?;
    let mut x0 = DVector::zeros(cfg.m);
    for i in sample(&mut rng, cfg.m, cfg.k0).into_iter() {
        x0[i] = rng.sample::<f64, _>(StandardNormal);
    }
    let clean = dict.matrix() * &x0;
    let mut y = clean.clone();
    if let Some(snr) = cfg.snr_db {
        let noise = DVector::from_fn(cfg.n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = (clean.norm_squared() / 10f64.powf(snr / 10.0)).sqrt() / noise.norm();
        y += noise * scale;
    }
    Ok((dict, x0, y))
}

/// `||x - x_hat||^2 / ||x||`.
pub fn normalized_mse(x: &DVector<f64>, x_hat: &DVector<f64>) -> f64 {
    (x - x_hat).norm_squared() / x.norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub penalty: String,
    pub lambda: f64,
    pub mse: f64,
    pub l0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedRow {
    pub penalty: String,
    pub lambda_mean: f64,
    pub mse: f64,
    pub l0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<SweepRow>,
    pub learned: Vec<LearnedRow>,
    /// Solver runs that stopped at their iteration cap.
    pub unconverged: usize,
}

struct TrialOutcome {
    // [penalty][lambda] -> (mse, l0)
    grid: Vec<Vec<(f64, f64)>>,
    // [penalty] -> (lambda, mse, l0)
    learned: Vec<(f64, f64, f64)>,
    unconverged: usize,
}

fn run_trial(cfg: &ExperimentConfig, grid: &[f64], trial: usize) -> Result<TrialOutcome> {
    let (dict, x0, y) = draw_instance(cfg, trial)?;
    let mut out = TrialOutcome { grid: Vec::new(), learned: Vec::new(), unconverged: 0 };
    for pen in &cfg.penalties {
        let mut row = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let rep = solve_type1(&dict, pen, lambda, &y, &cfg.type1)?;
            out.unconverged += usize::from(!rep.converged);
            row.push((normalized_mse(&x0, &rep.x_hat), count_nonzero(&rep.x_hat, L0_THRESHOLD) as f64));
        }
        out.grid.push(row);
        let est = learn_lambda_type1(&dict, pen, &y, &cfg.lambda)?;
        out.unconverged += usize::from(!est.converged);
        out.learned.push((
            est.lambda_star,
            normalized_mse(&x0, &est.x_star),
            count_nonzero(&est.x_star, L0_THRESHOLD) as f64,
        ));
    }
    Ok(out)
}

/// Averages, over seeded trials, the error and sparsity of the Type I
/// estimate at every grid value, and at the learned lambda.
pub fn run_lambda_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.grid();
    let outcomes = par_trials(cfg.trials, jobs, |t| run_trial(cfg, &grid, t))?;
    let count = outcomes.len() as f64;
    let mut result = SweepResult { grid: Vec::new(), learned: Vec::new(), unconverged: 0 };
    for o in &outcomes {
        result.unconverged += o.unconverged;
    }
    for (p, pen) in cfg.penalties.iter().enumerate() {
        let name = pen.to_string();
        for (j, &lambda) in grid.iter().enumerate() {
            let (mut mse, mut l0) = (0.0, 0.0);
            for o in &outcomes {
                mse += o.grid[p][j].0;
                l0 += o.grid[p][j].1;
            }
            result.grid.push(SweepRow { penalty: name.clone(), lambda, mse: mse / count, l0: l0 / count });
        }
        let (mut lam, mut mse, mut l0) = (0.0, 0.0, 0.0);
        for o in &outcomes {
            lam += o.learned[p].0;
            mse += o.learned[p].1;
            l0 += o.learned[p].2;
        }
        result.learned.push(LearnedRow { penalty: name, lambda_mean: lam / count, mse: mse / count, l0: l0 / count });
    }
    if result.unconverged > 0 {
        log::warn!("{} solver runs hit their iteration cap", result.unconverged);
    }
    Ok(result)
}

impl SweepResult {
    /// Smallest grid MSE for `penalty`, with its lambda.
    pub fn best_grid(&self, penalty: &str) -> Option<(f64, f64)> {
        self.grid
            .iter()
            .filter(|r| r.penalty == penalty)
            .map(|r| (r.lambda, r.mse))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn learned_for(&self, penalty: &str) -> Option<&LearnedRow> {
        self.learned.iter().find(|r| r.penalty == penalty)
    }

    /// Writes `mse_vs_lambda.csv`, `l0_vs_lambda.csv` and `learned_lambda.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<String>> {
        let rows = |f: fn(&SweepRow) -> f64| -> Vec<Vec<String>> {
            self.grid.iter().map(|r| vec![r.penalty.clone(), fmt_f64(r.lambda), fmt_f64(f(r))]).collect()
        };
        crate::io::write_table(dir.join("mse_vs_lambda.csv"), &["penalty", "lambda", "mse"], &rows(|r| r.mse))?;
        crate::io::write_table(dir.join("l0_vs_lambda.csv"), &["penalty", "lambda", "l0"], &rows(|r| r.l0))?;
        let learned: Vec<Vec<String>> = self
            .learned
            .iter()
            .map(|r| vec![r.penalty.clone(), fmt_f64(r.lambda_mean), fmt_f64(r.mse), fmt_f64(r.l0)])
            .collect();
        crate::io::write_table(dir.join("learned_lambda.csv"), &["penalty", "lambda_mean", "mse", "l0"], &learned)?;
        Ok(vec!["mse_vs_lambda.csv".into(), "l0_vs_lambda.csv".into(), "learned_lambda.csv".into()])
    }
}
