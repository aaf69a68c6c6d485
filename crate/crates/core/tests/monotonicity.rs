//! Majorization-minimization solvers never increase their objective.

mod common;

use common::{gaussian_dict, logistic_toy, normal_vec, rng, sparse_vec};
use sparse_duality::classifier::{fit_type2_classifier, type2_classifier_objective, ClassifierOptions};
use sparse_duality::report::is_non_increasing;
use sparse_duality::type2::type2_objective;
use sparse_duality::{solve_type1, solve_type2, HyperState, PenaltyFamily, Type1Options, Type2Options, UpdateRule};

const INSTANCES: u64 = 50;
const SLACK: f64 = 1e-9;

fn first_rise(trace: &[f64]) -> Option<(usize, f64)> {
    trace.windows(2).position(|w| w[1] > w[0] + SLACK).map(|k| (k, trace[k + 1] - trace[k]))
}

#[test]
fn type1_reweighted_least_squares() {
    let pens = [
        PenaltyFamily::LpNorm { p: 0.01 },
        PenaltyFamily::LpNorm { p: 0.5 },
        PenaltyFamily::LpNorm { p: 1.0 },
        PenaltyFamily::LogSum { delta: 0.1 },
        PenaltyFamily::ArdFlat,
    ];
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let pen = pens[seed as usize % pens.len()];
        let (n, m) = (10 + seed as usize % 11, 20 + seed as usize % 21);
        let d = gaussian_dict(&mut r, n, m);
        let y = d.matrix() * sparse_vec(&mut r, m, 3) + normal_vec(&mut r, n) * 0.1;
        let lambda = [1e-3, 0.05, 0.5][seed as usize % 3];
        let rep = solve_type1(&d, &pen, lambda, &y, &Type1Options::default()).unwrap();
        assert!(rep.objective_trace.len() > 1);
        assert!(is_non_increasing(&rep.objective_trace, SLACK), "seed {seed} {pen}: {:?}", first_rise(&rep.objective_trace));
    }
}

#[test]
fn type2_expectation_maximization() {
    let pens = [PenaltyFamily::ArdFlat, PenaltyFamily::LpNorm { p: 0.5 }, PenaltyFamily::LogSum { delta: 0.05 }];
    for seed in 0..INSTANCES {
        let mut r = rng(2000 + seed);
        let pen = pens[seed as usize % pens.len()];
        let (n, m) = (8 + seed as usize % 13, 16 + seed as usize % 25);
        let d = gaussian_dict(&mut r, n, m);
        let y = d.matrix() * sparse_vec(&mut r, m, 3) + normal_vec(&mut r, n) * 0.1;
        let lambda = [1e-3, 0.01, 0.3][seed as usize % 3];
        let opts = Type2Options { update_rule: UpdateRule::Em, max_iters: 300, ..Default::default() };
        let rep = solve_type2(&d, &pen, lambda, &y, &opts).unwrap();
        assert!(is_non_increasing(&rep.objective_trace, SLACK), "seed {seed} {pen}: {:?}", first_rise(&rep.objective_trace));
        // the last trace entry is the objective of the returned hyperparameters
        let v = type2_objective(&d, &pen, &HyperState::new(rep.gamma_hat.clone(), lambda).unwrap(), &y).unwrap();
        assert!((v - rep.final_objective()).abs() <= 1e-8 * (1.0 + v.abs()), "seed {seed}: {v} vs {}", rep.final_objective());
    }
}

#[test]
fn classifier_double_majorization() {
    for seed in 0..INSTANCES {
        let (n, m) = (20 + seed as usize % 21, 5 + seed as usize % 16);
        let design = logistic_toy(3000 + seed, n, m);
        let lambda = [0.3, 1.0, 4.0][seed as usize % 3];
        let opts = ClassifierOptions { lambda, max_outer: 300, ..Default::default() };
        let rep = fit_type2_classifier(&design, &PenaltyFamily::ArdFlat, &opts).unwrap();
        assert!(is_non_increasing(&rep.objective_trace, SLACK), "seed {seed}: {:?}", first_rise(&rep.objective_trace));
        let v = type2_classifier_objective(&design, &PenaltyFamily::ArdFlat, lambda, &rep.x_hat).unwrap();
        assert!(v <= rep.objective_trace[0] + SLACK, "seed {seed}");
    }
}
