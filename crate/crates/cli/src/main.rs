use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_duality::{PenaltyFamily, UpdateRule};

mod commands;

/// Sparse estimation with Type I and Type II (empirical Bayes) methods.
#[derive(Debug, Parser)]
#[command(name = "sparse-duality", version)]
struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for benchmark trials; results do not depend on it.
    #[arg(long, global = true, env = "SPARSE_DUALITY_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate coefficients for one dictionary and signal.
    #[command(subcommand)]
    Solve(SolveCmd),
    /// Estimate the noise variance lambda jointly with the coefficients.
    LearnLambda(LearnLambdaArgs),
    /// Run a seeded benchmark from a JSON config.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Sparse logistic classification.
    #[command(subcommand)]
    Classify(ClassifyCmd),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Dictionary CSV (`rows,cols` header line, then one row per line).
    #[arg(long)]
    dict: PathBuf,
    /// Signal CSV, one value per line.
    #[arg(long)]
    y: PathBuf,
}

#[derive(Debug, Subcommand)]
enum SolveCmd {
    /// Joint MAP estimate by reweighted least squares.
    Type1 {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        lambda: f64,
        /// `ard`, `gaussian`, `l1`, `lp:<p>` or `logsum[:<delta>]`.
        #[arg(long)]
        penalty: PenaltyFamily,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Evidence maximization followed by the posterior mean.
    Type2 {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value = "ard")]
        penalty: PenaltyFamily,
        /// `mackay`, `em` or `reweighted-l1`.
        #[arg(long, default_value = "mackay")]
        rule: UpdateRule,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Noiseless Type II by reweighted l1 under `y = Phi x`.
    Type2Noiseless {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        /// First alpha of the schedule; defaults to `1e-2 ||y||^2 / n`.
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        alpha_rho: f64,
        #[arg(long, default_value_t = 1e-10)]
        alpha_min: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LambdaMethod {
    Type1,
    Type2,
}

#[derive(Debug, Args)]
struct LearnLambdaArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "type1")]
    method: LambdaMethod,
    #[arg(long)]
    penalty: PenaltyFamily,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Error and sparsity over a lambda grid, plus learned lambda.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact recovery on a clustered dictionary: l1 against Type II.
    Recovery {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitMethod {
    /// Logistic loss plus the Type II penalty.
    Type2,
    /// Logistic loss with the approximate-l0 bound and an alpha homotopy.
    ApproxL0,
}

#[derive(Debug, Subcommand)]
enum ClassifyCmd {
    /// Fit weights; writes model.json.
    Fit {
        /// Training CSV: feature columns followed by a 0/1 label column.
        #[arg(long)]
        design: PathBuf,
        #[arg(long, value_enum, default_value = "type2")]
        method: FitMethod,
        #[arg(long, default_value = "ard")]
        penalty: PenaltyFamily,
        #[arg(long, default_value_t = 4.0)]
        lambda: f64,
        /// Fixed (alpha1, alpha2) instead of the default homotopy.
        #[arg(long, num_args = 2, value_names = ["ALPHA1", "ALPHA2"])]
        alphas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 2000)]
        max_outer: usize,
    },
    /// Class probabilities and 0/1 decisions; writes predictions.csv.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Feature CSV; a trailing label column is ignored.
        #[arg(long)]
        features: PathBuf,
    },
}

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// What a command produced, mapped to the process exit code.
enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: solver did not converge; outputs were written");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(sparse_duality::Error::NonConvergence { what, iterations }) => {
            eprintln!("error: {what} did not converge within {iterations} iterations");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
