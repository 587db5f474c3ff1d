use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sharp::objective::{lipschitz_estimate, Problem, Regularizer};
use sharp::operators::{DegradationEnsemble, LinearOperator};
use sharp::priors::GmmPrior;
use sharp::solver::{self, InitialPoint, SolverConfig};
use sharp::Error;

fn one_d() -> (Problem, Regularizer) {
    let prior = Arc::new(GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap());
    let ens = DegradationEnsemble::uniform(vec![LinearOperator::identity(1)], 1.0).unwrap();
    let reg = Regularizer::new(1.0, prior, ens).unwrap();
    let problem = Problem::new(LinearOperator::identity(1), DVector::zeros(1), 0.0).unwrap();
    (problem, reg)
}

fn final_values(batch: usize) -> Vec<f64> {
    let (problem, reg) = one_d();
    let restorer = reg.exact_restorer();
    (0..200u64)
        .map(|seed| {
            let mut cfg = SolverConfig::new(0.5, 50, seed);
            cfg.batch = batch;
            cfg.x0 = InitialPoint::Explicit(vec![2.0]);
            solver::run(&problem, &reg, &restorer, &cfg).unwrap().0[0]
        })
        .collect()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn larger_batch_reduces_spread_across_seeds() {
    let ratio = variance(&final_values(1)) / variance(&final_values(16));
    assert!(ratio > 2.0, "variance ratio {ratio}");
}

#[test]
fn oversized_step_is_reported_as_divergence() {
    let a = LinearOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![30.0, 0.01])));
    let prior = Arc::new(GmmPrior::isotropic(DVector::zeros(2), 1.0).unwrap());
    let ens = DegradationEnsemble::uniform(vec![LinearOperator::identity(2)], 0.5).unwrap();
    let reg = Regularizer::new(0.1, prior, ens).unwrap();
    let problem = Problem::new(a, DVector::from_vec(vec![1.0, 1.0]), 0.0).unwrap();
    let (l, _) = lipschitz_estimate(&problem, &reg).unwrap();
    let cfg = SolverConfig::new(10.0 / l, 5000, 1);
    let err = solver::run(&problem, &reg, &reg.exact_restorer(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identical_seed_gives_identical_trace(seed in any::<u64>(), batch in 1usize..4) {
        let (problem, reg) = one_d();
        let restorer = reg.exact_restorer();
        let mut cfg = SolverConfig::new(0.3, 20, seed);
        cfg.batch = batch;
        cfg.x0 = InitialPoint::Explicit(vec![1.0]);
        let (xa, ta) = solver::run(&problem, &reg, &restorer, &cfg).unwrap();
        let (xb, tb) = solver::run(&problem, &reg, &restorer, &cfg).unwrap();
        prop_assert_eq!(xa[0].to_bits(), xb[0].to_bits());
        prop_assert_eq!(ta.to_csv(), tb.to_csv());
        prop_assert_eq!(ta.records.len(), 20);
    }
}
