//! Quick oracle suite behind the `validate` subcommand.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::objective::{reg_grad_exact, reg_value_exact, Regularizer};
use crate::operators::masks::{cs_operator, kspace_rows, MaskPattern};
use crate::operators::{DegradationEnsemble, LinearOperator};
use crate::oracle::{oracle_grad, oracle_mmse, oracle_reg_value, QuadratureGrid};
use crate::priors::{mmse_restore, observation_logpdf, observation_score, GmmPrior, GmmRecipe, ObservationModel};
use crate::rng::{self, standard_normal};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed error next to its tolerance.
    pub detail: String,
}

fn check(name: &str, err: f64, tol: f64) -> ValidationCheck {
    ValidationCheck {
        name: name.to_string(),
        passed: err <= tol,
        detail: format!("max error {err:.3e} (tolerance {tol:.1e})"),
    }
}

fn recipe(dim: usize, components: usize, seed: u64) -> Result<GmmPrior> {
    GmmRecipe {
        dim,
        components,
        cov_scale: 0.5,
        seed,
        diagonal: false,
        image: None,
    }
    .build()
}

fn random_operator(m: usize, n: usize, seed: u64) -> LinearOperator {
    let mut rng = rng::seeded(seed);
    LinearOperator::dense(DMatrix::from_iterator(m, n, standard_normal(&mut rng, m * n).iter().cloned()))
}

fn adjoint_error(op: &LinearOperator, seed: u64) -> Result<f64> {
    let mut rng = rng::seeded(seed);
    let x = standard_normal(&mut rng, op.in_dim());
    let y = standard_normal(&mut rng, op.out_dim());
    let lhs = op.apply(&x)?.dot(&y);
    let rhs = x.dot(&op.adjoint_apply(&y)?);
    Ok((lhs - rhs).abs() / (x.norm() * y.norm()))
}

/// Runs the oracle suite; each entry reports pass/fail with its worst error.
pub fn validate() -> Result<Vec<ValidationCheck>> {
    let mut out = Vec::new();
    let grid = QuadratureGrid::new(801, 8.0, 20);

    let std_normal = GmmPrior::isotropic(DVector::zeros(1), 1.0)?;
    let obs = ObservationModel::new(LinearOperator::identity(1), 1.0)?;
    let s = DVector::from_element(1, 2.0);
    let closed = mmse_restore(&std_normal, &obs, &s)?[0];
    let quad = oracle_mmse(&std_normal, &obs, &s, &QuadratureGrid::default())?[0];
    out.push(check(
        "mmse_1d_worked_example",
        (closed - 1.0).abs().max((quad - 1.0).abs()),
        1e-8,
    ));

    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let prior = recipe(2, 2, 100 + seed)?;
        let obs = ObservationModel::new(random_operator(2, 2, 200 + seed), 0.5)?;
        let mut r = rng::seeded(300 + seed);
        let s = obs.h.apply(&prior.sample(&mut r))? + standard_normal(&mut r, 2) * 0.5;
        let a = mmse_restore(&prior, &obs, &s)?;
        let b = oracle_mmse(&prior, &obs, &s, &grid)?;
        worst = worst.max((a - b).amax());
    }
    out.push(check("mmse_2d_closed_form_vs_quadrature", worst, 1e-6));

    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let n = 1 + (seed as usize % 4);
        let prior = recipe(n, 3, 400 + seed)?;
        let obs = ObservationModel::new(random_operator(n, n, 500 + seed), 0.7)?;
        let mut r = rng::seeded(600 + seed);
        let s = standard_normal(&mut r, n);
        let score = observation_score(&prior, &obs, &s)?;
        let step = 1e-5;
        for d in 0..n {
            let mut p = s.clone();
            let mut m = s.clone();
            p[d] += step;
            m[d] -= step;
            let fd = (observation_logpdf(&prior, &obs, &p)? - observation_logpdf(&prior, &obs, &m)?) / (2.0 * step);
            worst = worst.max((fd - score[d]).abs());
        }
    }
    out.push(check("tweedie_score_vs_finite_difference", worst, 1e-6));

    let prior = Arc::new(recipe(1, 2, 700)?);
    let ens = DegradationEnsemble::uniform(vec![LinearOperator::identity(1), LinearOperator::scale(0.5, 1)], 0.6)?;
    let reg = Regularizer::new(0.8, Arc::clone(&prior), ens)?;
    let x = DVector::from_element(1, 0.3);
    let og = oracle_grad(&reg, &x, &QuadratureGrid::new(2001, 8.0, 40))?;
    let mut r = rng::seeded(701);
    let mc = reg_grad_exact(&reg, &x, 20_000, &mut r)?;
    let fd_q = (&og.finite_difference - &og.quadrature).amax();
    let mc_q = (&mc.mean - &og.quadrature).amax();
    let tol_mc = (3.0 * mc.std_error.amax()).max(1e-4);
    out.push(ValidationCheck {
        name: "gradient_three_way".into(),
        passed: fd_q <= 1e-4 && mc_q <= tol_mc,
        detail: format!("fd-vs-quadrature {fd_q:.3e} (1e-4), mc-vs-quadrature {mc_q:.3e} ({tol_mc:.2e})"),
    });

    let closed = reg_value_exact(&reg, &x)?;
    let quad = oracle_reg_value(&reg, &x, &QuadratureGrid::new(2001, 8.0, 40))?;
    out.push(check("regularizer_value_quadrature", (closed - quad).abs(), 1e-6));

    let rows = kspace_rows(16, 4, 2, MaskPattern::Uniform { offset: 1 })?;
    let ops = [
        LinearOperator::fourier(8, 6, false),
        LinearOperator::fourier(8, 6, true),
        LinearOperator::convolution_2d(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 2, 3, 7, 5)?,
        LinearOperator::downsample(3, 8, 7)?,
        cs_operator(16, 16, &rows)?,
        LinearOperator::convex_combo(0.3, LinearOperator::convolution_1d(vec![0.25, 0.5, 0.25], 12)?)?,
    ];
    let mut worst: f64 = 0.0;
    for (i, op) in ops.iter().enumerate() {
        worst = worst.max(adjoint_error(op, 800 + i as u64)?);
    }
    out.push(check("operator_adjoint_identities", worst, 1e-12));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in validate().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
