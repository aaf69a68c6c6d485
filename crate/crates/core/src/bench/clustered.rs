//! Clustered dictionaries and the exact-recovery experiment.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fmt_f64, par_trials, trial_rng};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::report::count_nonzero;
use crate::type2::{solve_type2_noiseless, support_of, AlphaSchedule, Type2Options};
use crate::wl1::{solve_wl1_report, Wl1Mode, Wl1Options, Wl1Problem};

const MAX_ROUNDS: usize = 100;
const RANK_SAMPLES: usize = 50;
const RANK_RCOND: f64 = 1e-10;
/// A planted cluster whose coefficients sum to less than this fraction of
/// their l2 norm counts as cancelling.
const CANCEL_REL: f64 = 1e-2;
const SUCCESS_REL_ERR: f64 = 1e-4;

/// A base dictionary with column `i` replaced by `cluster_sizes[i]` nearby columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub base_n: usize,
    pub base_d: usize,
    pub cluster_sizes: Vec<usize>,
    /// Largest allowed angle between two columns of one cluster, in radians.
    pub epsilon: f64,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_n == 0 || self.base_d == 0 {
            return Err(Error::Config("cluster spec: base_n and base_d must be positive".into()));
        }
        if self.cluster_sizes.len() != self.base_d {
            return Err(Error::Config(format!(
                "cluster spec: cluster_sizes has {} entries for base_d = {}",
                self.cluster_sizes.len(),
                self.base_d
            )));
        }
        if self.cluster_sizes.contains(&0) {
            return Err(Error::Config("cluster spec: cluster sizes must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!("cluster spec: epsilon must lie in (0, pi/2), got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn total_columns(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }
}

/// Angle between two unit vectors, accurate for nearly parallel pairs.
fn angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let cross = (a - b).norm();
    let sum = (a + b).norm();
    2.0 * cross.atan2(sum)
}

/// Largest pairwise angle inside each cluster.
pub fn intra_cluster_angles(dict: &Dictionary) -> Vec<f64> {
    let Some(groups) = dict.clusters() else {
        return Vec::new();
    };
    let phi = dict.matrix();
    groups
        .iter()
        .map(|g| {
            let mut worst = 0.0f64;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    worst = worst.max(angle(&phi.column(i).into_owned(), &phi.column(j).into_owned()));
                }
            }
            worst
        })
        .collect()
}

fn sampled_full_rank<R: Rng + ?Sized>(phi: &DMatrix<f64>, rng: &mut R) -> bool {
    let (n, m) = phi.shape();
    if m < n {
        return phi.clone().svd(false, false).rank(RANK_RCOND) == m;
    }
    (0..RANK_SAMPLES).all(|_| {
        let cols = sample(rng, m, n).into_vec();
        let sub = phi.select_columns(&cols);
        let sv = sub.singular_values();
        sv.min() > RANK_RCOND * sv.max()
    })
}

/// Builds the dictionary described by `spec`: unit-norm Gaussian base columns,
/// each replaced by `normalize(b + delta r)` for every cluster member. Draws
/// are rejected until every intra-cluster angle is below `epsilon` and the
/// sampled square submatrices are full rank.
pub fn gen_clustered_dictionary(spec: &ClusterSpec) -> Result<Dictionary> {
    generate(spec).map(|(d, _)| d)
}

/// The clustered dictionary together with the base it was grown from.
fn generate(spec: &ClusterSpec) -> Result<(Dictionary, DMatrix<f64>)> {
    spec.validate()?;
    let n = spec.base_n;
    let mut rng = trial_rng(spec.seed, 0);
    // typical angle between two perturbed copies is about delta sqrt(2n)
    let delta = 0.5 * spec.epsilon / (2.0 * n as f64).sqrt();
    let m = spec.total_columns();
    let map: Vec<usize> = spec.cluster_sizes.iter().enumerate().flat_map(|(i, &s)| std::iter::repeat_n(i, s)).collect();
    for _ in 0..MAX_ROUNDS {
        let base = Dictionary::gaussian(n, spec.base_d, &mut rng)?;
        if spec.cluster_sizes.iter().all(|&s| s == 1) {
            let phi = base.matrix().clone();
            return Ok((base.with_clusters(map)?, phi));
        }
        let mut raw = DMatrix::zeros(n, m);
        let mut col = 0;
        for (i, &size) in spec.cluster_sizes.iter().enumerate() {
            let b = base.matrix().column(i);
            for _ in 0..size {
                let mut c = b.into_owned();
                if size > 1 {
                    for v in c.iter_mut() {
                        *v += delta * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                raw.set_column(col, &c);
                col += 1;
            }
        }
        let dict = Dictionary::new(raw)?.with_clusters(map.clone())?;
        let tight = intra_cluster_angles(&dict).iter().all(|&a| a < spec.epsilon);
        if tight && sampled_full_rank(dict.matrix(), &mut rng) {
            return Ok((dict, base.matrix().clone()));
        }
    }
    Err(Error::GenerationFailure { rounds: MAX_ROUNDS })
}

fn cluster_sums(dict: &Dictionary, x: &DVector<f64>) -> Result<Vec<(usize, f64, f64)>> {
    let groups = dict.clusters().ok_or_else(|| Error::Config("dictionary has no cluster map".into()))?;
    Ok(groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|&j| x[j] != 0.0))
        .map(|(k, g)| {
            let sum: f64 = g.iter().map(|&j| x[j]).sum();
            let norm = g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt();
            (k, sum, norm)
        })
        .collect())
}

/// Rejects coefficient vectors whose active clusters (nearly) cancel, or
/// whose support does not fit the dictionary.
pub fn check_non_cancellation(dict: &Dictionary, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != dict.ncols() {
        return Err(Error::Config(format!("planted vector has {} entries for {} columns", x0.len(), dict.ncols())));
    }
    let sums = cluster_sums(dict, x0)?;
    if sums.is_empty() {
        return Err(Error::Config("planted vector is zero".into()));
    }
    for &(k, sum, norm) in &sums {
        if sum.abs() <= CANCEL_REL * norm {
            return Err(Error::Config(format!("coefficients of cluster {k} sum to {sum:e}; they must not cancel")));
        }
    }
    let active = x0.iter().filter(|&&v| v != 0.0).count();
    if active > dict.nrows() {
        return Err(Error::Config(format!("planted support of {active} exceeds the {} rows", dict.nrows())));
    }
    Ok(())
}

/// Draws Gaussian coefficients on every column of `clusters` randomly chosen
/// clusters, redrawing any cluster whose coefficients cancel.
pub fn plant_clustered<R: Rng + ?Sized>(dict: &Dictionary, clusters: usize, rng: &mut R) -> Result<(DVector<f64>, Vec<usize>)> {
    let groups = dict.clusters().ok_or_else(|| Error::Config("dictionary has no cluster map".into()))?;
    if clusters == 0 || clusters > groups.len() {
        return Err(Error::Config(format!("cannot activate {clusters} of {} clusters", groups.len())));
    }
    let mut omega = sample(rng, groups.len(), clusters).into_vec();
    omega.sort_unstable();
    let mut x0 = DVector::zeros(dict.ncols());
    for &k in &omega {
        for _ in 0..MAX_ROUNDS {
            for &j in &groups[k] {
                x0[j] = rng.sample::<f64, _>(StandardNormal);
            }
            let sum: f64 = groups[k].iter().map(|&j| x0[j]).sum();
            let norm = groups[k].iter().map(|&j| x0[j] * x0[j]).sum::<f64>().sqrt();
            if sum.abs() > CANCEL_REL * norm {
                break;
            }
        }
    }
    check_non_cancellation(dict, &x0)?;
    Ok((x0, omega))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub cluster: ClusterSpec,
    #[serde(default = "default_active")]
    pub active_clusters: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub alpha: AlphaSchedule,
    #[serde(default)]
    pub type2: Type2Options,
    /// Use this coefficient vector in every trial instead of random draws.
    #[serde(default)]
    pub planted: Option<Vec<f64>>,
    pub seed: u64,
}

fn default_active() -> usize {
    4
}
fn default_trials() -> usize {
    200
}
fn default_q() -> f64 {
    1.0
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.alpha.validate()?;
        self.type2.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.q > 0.0) {
            return Err(Error::Config(format!("q must be positive, got {}", self.q)));
        }
        if self.planted.is_none() {
            if self.active_clusters == 0 || self.active_clusters > self.cluster.base_d {
                return Err(Error::Config(format!(
                    "active_clusters must lie in 1..={}, got {}",
                    self.cluster.base_d, self.active_clusters
                )));
            }
            let mut sizes = self.cluster.cluster_sizes.clone();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            let worst: usize = sizes.iter().take(self.active_clusters).sum();
            if worst > self.cluster.base_n {
                return Err(Error::Config(format!(
                    "{} active clusters can hold {worst} columns, more than base_n = {}",
                    self.active_clusters, self.cluster.base_n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub trial: usize,
    pub x0: Vec<f64>,
    pub omega0: Vec<usize>,
    pub active_columns: usize,
    pub cluster_sums: Vec<f64>,
    pub min_abs_cluster_sum: f64,
    /// Plain l1 recovers the collapsed problem on the base dictionary.
    pub base_l1_success: bool,
    pub success_l1: bool,
    pub success_type2: bool,
    pub rel_err_l1: f64,
    pub rel_err_type2: f64,
    pub residual_l1: f64,
    pub residual_type2: f64,
    pub l0_l1: usize,
    pub l0_type2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub trials: Vec<RecoveryTrial>,
    pub l1_rate: f64,
    pub type2_rate: f64,
    /// Trials where l1 succeeded but Type II did not.
    pub dominance_violations: usize,
    pub base_l1_rate: f64,
}

fn recovered(x: &DVector<f64>, x0: &DVector<f64>) -> (bool, f64) {
    let rel = (x - x0).norm() / x0.norm();
    (rel < SUCCESS_REL_ERR && support_of(x) == support_of(x0), rel)
}

fn plain_l1(phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let prob = Wl1Problem::from_matrix(phi, y, DVector::from_element(phi.ncols(), 1.0), Wl1Mode::Equality)?;
    let sol = solve_wl1_report(&prob, &Wl1Options::default(), None)?;
    if !sol.converged {
        log::warn!("plain l1 stopped with gap {:e}", sol.duality_gap);
    }
    Ok(sol.x)
}

/// Collapses each cluster onto its base column: `(y_base, x_base)`.
fn base_problem(spec: &ClusterSpec, base: &DMatrix<f64>, x0: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut xb = DVector::zeros(spec.base_d);
    let mut col = 0;
    for (i, &size) in spec.cluster_sizes.iter().enumerate() {
        xb[i] = x0.rows(col, size).sum();
        col += size;
    }
    (base * &xb, xb)
}

/// Runs `trials` seeded noiseless recovery problems on one clustered
/// dictionary, solving each with plain l1 and with noiseless Type II.
pub fn run_recovery_experiment(config: &RecoveryConfig, jobs: usize) -> Result<RecoveryResult> {
    config.validate()?;
    let (dict, base) = generate(&config.cluster)?;
    let planted = match &config.planted {
        Some(v) => {
            let x0 = DVector::from_column_slice(v);
            check_non_cancellation(&dict, &x0)?;
            Some(x0)
        }
        None => None,
    };
    let phi = dict.matrix();
    let trials = par_trials(config.trials, jobs, |t| {
        let mut rng = trial_rng(config.seed, t);
        let (x0, _) = match &planted {
            Some(x0) => (x0.clone(), Vec::new()),
            None => plant_clustered(&dict, config.active_clusters, &mut rng)?,
        };
        let sums = cluster_sums(&dict, &x0)?;
        let y = phi * &x0;

        let (base_y, base_x0) = base_problem(&config.cluster, &base, &x0);
        let (base_l1_success, _) = recovered(&plain_l1(&base, &base_y)?, &base_x0);

        let x_l1 = plain_l1(phi, &y)?;
        let (success_l1, rel_err_l1) = recovered(&x_l1, &x0);
        let rep = solve_type2_noiseless(&dict, &y, &config.alpha, config.q, &config.type2)?;
        let (success_type2, rel_err_type2) = recovered(&rep.x_hat, &x0);

        Ok(RecoveryTrial {
            trial: t,
            omega0: sums.iter().map(|s| s.0).collect(),
            active_columns: x0.iter().filter(|&&v| v != 0.0).count(),
            min_abs_cluster_sum: sums.iter().map(|s| s.1.abs()).fold(f64::INFINITY, f64::min),
            cluster_sums: sums.iter().map(|s| s.1).collect(),
            base_l1_success,
            success_l1,
            success_type2,
            rel_err_l1,
            rel_err_type2,
            residual_l1: (&y - phi * &x_l1).norm(),
            residual_type2: (&y - phi * &rep.x_hat).norm(),
            l0_l1: count_nonzero(&x_l1, 1e-8),
            l0_type2: count_nonzero(&rep.x_hat, 1e-8),
            x0: x0.iter().copied().collect(),
        })
    })?;
    let total = trials.len() as f64;
    let rate = |f: fn(&RecoveryTrial) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / total;
    Ok(RecoveryResult {
        l1_rate: rate(|t| t.success_l1),
        type2_rate: rate(|t| t.success_type2),
        base_l1_rate: rate(|t| t.base_l1_success),
        dominance_violations: trials.iter().filter(|t| t.success_l1 && !t.success_type2).count(),
        trials,
    })
}

impl RecoveryResult {
    pub const TRIALS_HEADER: [&'static str; 11] = [
        "trial",
        "omega0",
        "active_columns",
        "min_abs_cluster_sum",
        "base_l1_success",
        "success_l1",
        "success_type2",
        "rel_err_l1",
        "rel_err_type2",
        "l0_l1",
        "l0_type2",
    ];
    pub const SUMMARY_HEADER: [&'static str; 5] =
        ["trials", "l1_rate", "type2_rate", "dominance_violations", "base_l1_rate"];

    pub fn trial_rows(&self) -> Vec<Vec<String>> {
        self.trials
            .iter()
            .map(|t| {
                let omega: Vec<String> = t.omega0.iter().map(|k| k.to_string()).collect();
                vec![
                    t.trial.to_string(),
                    omega.join(";"),
                    t.active_columns.to_string(),
                    fmt_f64(t.min_abs_cluster_sum),
                    t.base_l1_success.to_string(),
                    t.success_l1.to_string(),
                    t.success_type2.to_string(),
                    fmt_f64(t.rel_err_l1),
                    fmt_f64(t.rel_err_type2),
                    t.l0_l1.to_string(),
                    t.l0_type2.to_string(),
                ]
            })
            .collect()
    }

    pub fn summary_row(&self) -> Vec<String> {
        vec![
            self.trials.len().to_string(),
            fmt_f64(self.l1_rate),
            fmt_f64(self.type2_rate),
            self.dominance_violations.to_string(),
            fmt_f64(self.base_l1_rate),
        ]
    }

    /// Writes `trials.csv` and `summary.csv` into `dir`; returns the file names.
    pub fn write_csv(&self, dir: &std::path::Path) -> Result<Vec<String>> {
        crate::io::write_table(dir.join("trials.csv"), &Self::TRIALS_HEADER, &self.trial_rows())?;
        crate::io::write_table(dir.join("summary.csv"), &Self::SUMMARY_HEADER, &[self.summary_row()])?;
        Ok(vec!["trials.csv".into(), "summary.csv".into()])
    }
}
