use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use sparse_duality::bench::{run_lambda_sweep, run_recovery_experiment, ExperimentConfig, RecoveryConfig, RunManifest, Timing};
use sparse_duality::classifier::{
    fit_approx_l0_classifier, fit_type2_classifier, predict, AlphaHomotopy, ClassifierModel, ClassifierOptions,
};
use sparse_duality::lambda::{learn_lambda_type1, learn_lambda_type2, LambdaOptions};
use sparse_duality::{
    io, solve_type1, solve_type2, solve_type2_noiseless, AlphaSchedule, Dictionary, Error, Result, SolveReport,
    Type1Options, Type2Options,
};

use crate::{BenchCmd, ClassifyCmd, Cli, Command, FitMethod, LambdaMethod, LearnLambdaArgs, Outcome, ProblemArgs, SolveCmd};

pub fn run(cli: &Cli) -> Result<Outcome> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::Solve(cmd) => solve(cmd, &cli.out_dir),
        Command::LearnLambda(args) => learn_lambda(args, &cli.out_dir),
        Command::Bench(cmd) => bench(cmd, &cli.out_dir, jobs),
        Command::Classify(cmd) => classify(cmd, &cli.out_dir),
    }
}

fn load_problem(args: &ProblemArgs) -> Result<(Dictionary, DVector<f64>)> {
    let dict = Dictionary::new(io::read_matrix(&args.dict)?).map_err(|e| Error::Parse {
        path: args.dict.display().to_string(),
        msg: e.to_string(),
    })?;
    let y = io::read_vector(&args.y)?;
    if y.len() != dict.nrows() {
        return Err(Error::Dimension(format!(
            "{} has {} values but {} has {} rows",
            args.y.display(),
            y.len(),
            args.dict.display(),
            dict.nrows()
        )));
    }
    Ok((dict, y))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))
        .and_then(|_| std::fs::write(path, body + "\n"))
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

#[derive(Serialize)]
struct ReportJson<'a> {
    solver: &'a str,
    penalty: Option<String>,
    lambda: Option<f64>,
    converged: bool,
    iterations: usize,
    final_objective: f64,
    support_size: usize,
    wall_time: f64,
    objective_trace: &'a [f64],
}

fn solve(cmd: &SolveCmd, out: &Path) -> Result<Outcome> {
    let (name, penalty, lambda, dict, report) = match cmd {
        SolveCmd::Type1 { problem, lambda, penalty, max_iters, tol } => {
            let (dict, y) = load_problem(problem)?;
            let opts = Type1Options { max_iters: *max_iters, tol: *tol, ..Default::default() };
            let rep = solve_type1(&dict, penalty, *lambda, &y, &opts)?;
            ("type1", Some(penalty.to_string()), Some(*lambda), dict, rep)
        }
        SolveCmd::Type2 { problem, lambda, penalty, rule, max_iters, tol } => {
            let (dict, y) = load_problem(problem)?;
            let opts = Type2Options { update_rule: *rule, max_iters: *max_iters, tol: *tol, ..Default::default() };
            let rep = solve_type2(&dict, penalty, *lambda, &y, &opts)?;
            ("type2", Some(penalty.to_string()), Some(*lambda), dict, rep)
        }
        SolveCmd::Type2Noiseless { problem, q, alpha0, alpha_rho, alpha_min, max_iters } => {
            let (dict, y) = load_problem(problem)?;
            let schedule = AlphaSchedule { alpha0: *alpha0, rho: *alpha_rho, alpha_min: *alpha_min };
            let opts = Type2Options { max_iters: *max_iters, ..Default::default() };
            let rep = solve_type2_noiseless(&dict, &y, &schedule, *q, &opts)?;
            ("type2-noiseless", None, None, dict, rep)
        }
    };
    write_solution(out, &dict, &report)?;
    write_json(
        &out.join("report.json"),
        &ReportJson {
            solver: name,
            penalty,
            lambda,
            converged: report.converged,
            iterations: report.iterations,
            final_objective: report.final_objective(),
            support_size: report.x_hat.iter().filter(|&&v| v != 0.0).count(),
            wall_time: report.wall_time,
            objective_trace: &report.objective_trace,
        },
    )?;
    Ok(if report.converged { Outcome::Done } else { Outcome::NotConverged })
}

/// Coefficients and hyperparameters on the scale of the input columns
/// (the solvers work with unit-norm columns).
fn write_solution(out: &Path, dict: &Dictionary, report: &SolveReport) -> Result<()> {
    let norms = dict.column_norms();
    let x = DVector::from_fn(norms.len(), |j, _| report.x_hat[j] / norms[j]);
    let gamma = DVector::from_fn(norms.len(), |j, _| report.gamma_hat[j] / (norms[j] * norms[j]));
    io::write_vector(out.join("x.csv"), &x)?;
    io::write_vector(out.join("gamma.csv"), &gamma)
}

#[derive(Serialize)]
struct EstimateJson {
    method: &'static str,
    penalty: String,
    lambda_star: f64,
    ml_lambda: f64,
    objective: f64,
    converged: bool,
    iterations: usize,
    support_size: usize,
    objective_trace: Vec<f64>,
}

fn learn_lambda(args: &LearnLambdaArgs, out: &Path) -> Result<Outcome> {
    let (dict, y) = load_problem(&args.problem)?;
    let opts = LambdaOptions { max_iters: args.max_iters, tol: args.tol, ..Default::default() };
    let (method, est) = match args.method {
        LambdaMethod::Type1 => ("type1", learn_lambda_type1(&dict, &args.penalty, &y, &opts)?),
        LambdaMethod::Type2 => ("type2", learn_lambda_type2(&dict, &args.penalty, &y, &opts)?),
    };
    let report = SolveReport {
        x_hat: est.x_star.clone(),
        gamma_hat: est.gamma.clone(),
        objective_trace: est.objective_trace.clone(),
        iterations: est.iterations,
        converged: est.converged,
        wall_time: 0.0,
    };
    write_solution(out, &dict, &report)?;
    write_json(
        &out.join("lambda.json"),
        &EstimateJson {
            method,
            penalty: args.penalty.to_string(),
            lambda_star: est.lambda_star,
            ml_lambda: est.ml_lambda(),
            objective: est.objective,
            converged: est.converged,
            iterations: est.iterations,
            support_size: est.x_star.iter().filter(|&&v| v != 0.0).count(),
            objective_trace: est.objective_trace,
        },
    )?;
    Ok(if est.converged { Outcome::Done } else { Outcome::NotConverged })
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })
}

fn bench(cmd: &BenchCmd, out: &Path, jobs: usize) -> Result<Outcome> {
    let start = Instant::now();
    let (mut manifest, dir) = match cmd {
        BenchCmd::Sweep { config } => {
            let cfg: ExperimentConfig = read_config(config)?;
            cfg.validate().map_err(|e| in_config(config, e))?;
            let manifest = RunManifest::new("sweep", &cfg, cfg.seed)?;
            let dir = manifest.run_dir(out);
            let result = run_lambda_sweep(&cfg, jobs)?;
            let outputs = result.write_csv(&create_dir(&dir)?)?;
            (RunManifest { outputs, ..manifest }, dir)
        }
        BenchCmd::Recovery { config } => {
            let cfg: RecoveryConfig = read_config(config)?;
            cfg.validate().map_err(|e| in_config(config, e))?;
            let manifest = RunManifest::new("recovery", &cfg, cfg.seed)?;
            let dir = manifest.run_dir(out);
            let result = run_recovery_experiment(&cfg, jobs).map_err(|e| in_config(config, e))?;
            let outputs = result.write_csv(&create_dir(&dir)?)?;
            println!(
                "l1 rate {}, type II rate {}, dominance violations {}",
                result.l1_rate, result.type2_rate, result.dominance_violations
            );
            (RunManifest { outputs, ..manifest }, dir)
        }
    };
    manifest.timings.push(Timing { step: "run".into(), seconds: start.elapsed().as_secs_f64() });
    manifest.write_atomic(&dir)?;
    println!("{}", dir.display());
    Ok(Outcome::Done)
}

fn create_dir(dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    Ok(dir.to_path_buf())
}

/// Names the config file in configuration errors.
fn in_config(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Parse { path: path.display().to_string(), msg },
        other => other,
    }
}

fn classify(cmd: &ClassifyCmd, out: &Path) -> Result<Outcome> {
    match cmd {
        ClassifyCmd::Fit { design, method, penalty, lambda, alphas, max_outer } => {
            let data = io::read_design(design)?;
            let mut opts = ClassifierOptions { lambda: *lambda, max_outer: *max_outer, ..Default::default() };
            if let Some(a) = alphas {
                opts.homotopy = AlphaHomotopy::fixed(a[0], a[1]);
            }
            let (name, report) = match method {
                FitMethod::Type2 => ("type2", fit_type2_classifier(&data, penalty, &opts)?),
                FitMethod::ApproxL0 => ("approx-l0", fit_approx_l0_classifier(&data, &opts)?),
            };
            let model = ClassifierModel::from_report(name, &report);
            write_json(&out.join("model.json"), &model)?;
            Ok(if report.converged { Outcome::Done } else { Outcome::NotConverged })
        }
        ClassifyCmd::Predict { model, features } => {
            let model: ClassifierModel = read_config(model)?;
            let phi = io::read_features(features, model.weights.len())?;
            let (probs, labels) = predict(&phi, &DVector::from_column_slice(&model.weights))?;
            let rows: Vec<Vec<String>> =
                probs.iter().zip(&labels).map(|(p, l)| vec![format!("{p}"), l.to_string()]).collect();
            io::write_table(out.join("predictions.csv"), &["probability", "label"], &rows)?;
            Ok(Outcome::Done)
        }
    }
}
