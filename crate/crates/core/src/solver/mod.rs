//! The stochastic restoration-gradient iteration and its diagnostics.

mod audit;
mod trace;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use audit::{audit_convergence, AuditOptions, AuditReport};
pub use trace::{Trace, TraceRecord, TRACE_HEADER};

use crate::error::{check_len, Error, Result};
use crate::metrics;
use crate::objective::{self, regularizer_term, Problem, Regularizer};
use crate::operators::DegradationEnsemble;
use crate::restoration::RestorationOperator;
use crate::rng::{self, gaussian_noise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    IidByWeights,
    Cyclic,
    Fixed(usize),
}

impl Default for Selection {
    fn default() -> Self {
        Selection::IidByWeights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPoint {
    Zeros,
    AdjointInit,
    Explicit(Vec<f64>),
}

impl Default for InitialPoint {
    fn default() -> Self {
        InitialPoint::Zeros
    }
}

/// Optional per-iteration diagnostics. None of these touch the selection or
/// noise streams, so enabling them never changes the iterates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    /// Record `‖∇f(x^k)‖`; closed form for a single Gaussian, otherwise a
    /// Monte Carlo estimate with this many samples.
    pub true_grad_samples: Option<usize>,
    /// Record `f(x^k)` where the exact regularizer value is computable.
    pub f_value: bool,
    /// Keep every iterate `x^0 … x^t` in the trace.
    pub record_iterates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    /// Overrides the regularizer weight when set.
    #[serde(default)]
    pub tau: Option<f64>,
    pub iterations: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: InitialPoint,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

fn default_batch() -> usize {
    1
}

impl SolverConfig {
    pub fn new(gamma: f64, iterations: usize, seed: u64) -> Self {
        Self {
            gamma,
            tau: None,
            iterations,
            selection: Selection::IidByWeights,
            batch: 1,
            seed,
            x0: InitialPoint::Zeros,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::invalid(format!("tau must be finite and >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Ground truth for PSNR tracking.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x_true: DVector<f64>,
    pub peak: f64,
    /// Compare magnitude images.
    pub magnitude: bool,
}

impl Reference {
    pub fn psnr(&self, x: &DVector<f64>) -> Result<f64> {
        if self.magnitude {
            Ok(metrics::psnr(&metrics::magnitude(x), &metrics::magnitude(&self.x_true), self.peak)?.db)
        } else {
            Ok(metrics::psnr(x, &self.x_true, self.peak)?.db)
        }
    }
}

/// Index of the degradation used for draw number `draw`.
pub fn select_operator<R: Rng + ?Sized>(
    strategy: &Selection,
    ens: &DegradationEnsemble,
    draw: usize,
    rng: &mut R,
) -> Result<usize> {
    match strategy {
        Selection::IidByWeights => Ok(ens.sample_degradation(rng).0),
        Selection::Cyclic => Ok(draw % ens.len()),
        Selection::Fixed(i) if *i < ens.len() => Ok(*i),
        Selection::Fixed(i) => Err(Error::invalid(format!(
            "fixed selection index {i} outside ensemble of {}",
            ens.len()
        ))),
    }
}

pub fn initial_point(problem: &Problem, x0: &InitialPoint) -> Result<DVector<f64>> {
    match x0 {
        InitialPoint::Zeros => Ok(DVector::zeros(problem.dim())),
        InitialPoint::AdjointInit => problem.a.adjoint_apply(&problem.y),
        InitialPoint::Explicit(v) => {
            check_len("initial point", problem.dim(), v.len())?;
            Ok(DVector::from_column_slice(v))
        }
    }
}

pub fn run(
    problem: &Problem,
    reg: &Regularizer,
    restorer: &RestorationOperator,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, Trace)> {
    run_with_reference(problem, reg, restorer, cfg, None)
}

pub fn run_with_reference(
    problem: &Problem,
    reg: &Regularizer,
    restorer: &RestorationOperator,
    cfg: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(DVector<f64>, Trace)> {
    cfg.validate()?;
    let n = problem.dim();
    check_len("regularizer dimension", n, reg.prior().dim())?;
    check_len("ensemble input dimension", n, reg.ens.in_dim())?;
    if restorer.sigma() != reg.sigma() {
        return Err(Error::invalid(format!(
            "restorer sigma {} differs from ensemble sigma {}",
            restorer.sigma(),
            reg.sigma()
        )));
    }
    if let Selection::Fixed(i) = cfg.selection {
        if i >= reg.ens.len() {
            return Err(Error::invalid(format!("fixed selection index {i} out of range")));
        }
    }
    if let Some(r) = reference {
        check_len("reference image", n, r.x_true.len())?;
    }
    let owned;
    let reg = match cfg.tau {
        Some(t) if t != reg.tau => {
            owned = reg.with_tau(t)?;
            &owned
        }
        _ => reg,
    };

    let mut sel_rng = rng::stream(cfg.seed, rng::STREAM_SELECTION);
    let mut noise_rng = rng::stream(cfg.seed, rng::STREAM_NOISE);
    let mut probe_rng = rng::stream(cfg.seed, rng::STREAM_PROBE);
    let sigma = reg.sigma();
    let single = reg.prior().is_single_gaussian();
    let mut want_f = cfg.diagnostics.f_value;

    let mut x = initial_point(problem, &cfg.x0)?;
    let mut trace = Trace::with_capacity(cfg.iterations);
    if cfg.diagnostics.record_iterates {
        trace.iterates.push(x.clone());
    }
    let mut draw = 0usize;
    for k in 1..=cfg.iterations {
        let mut grad = problem.fidelity_grad(&x)?;
        let mut op_index = 0;
        if reg.tau != 0.0 {
            let mut term: Option<DVector<f64>> = None;
            for _ in 0..cfg.batch {
                op_index = select_operator(&cfg.selection, &reg.ens, draw, &mut sel_rng)?;
                draw += 1;
                let h = reg.ens.member(op_index);
                let noise = gaussian_noise(&mut noise_rng, h.out_dim(), sigma);
                let t = regularizer_term(reg, restorer, &x, h, &noise)?;
                term = Some(match term {
                    Some(acc) => acc + t,
                    None => t,
                });
            }
            let mut term = term.expect("batch >= 1");
            if cfg.batch > 1 {
                term /= cfg.batch as f64;
            }
            grad += term;
        }
        let grad_hat_norm = grad.norm();
        let step = &grad * cfg.gamma;
        let next = &x - &step;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                iteration: k,
                last_finite: x,
            });
        }
        let step_sq = (&next - &x).norm_squared();
        x = next;

        let grad_true_norm = match cfg.diagnostics.true_grad_samples {
            Some(_) if single => Some(objective::full_grad_closed_form(problem, reg, &x)?.norm()),
            Some(samples) => Some(
                (problem.fidelity_grad(&x)?
                    + objective::reg_grad_exact(reg, &x, samples.max(1), &mut probe_rng)?.mean)
                    .norm(),
            ),
            None => None,
        };
        let f_value = if want_f {
            match objective::objective_value(problem, reg, &x) {
                Ok(v) => Some(v),
                Err(Error::Refused(_)) => {
                    want_f = false;
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let psnr = reference.map(|r| r.psnr(&x)).transpose()?;
        trace.records.push(TraceRecord {
            k,
            op_index,
            step_sq,
            grad_hat_norm,
            grad_true_norm,
            f_value,
            psnr,
        });
        if cfg.diagnostics.record_iterates {
            trace.iterates.push(x.clone());
        }
    }
    trace.final_iterate = x.clone();
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::LinearOperator;
    use crate::priors::GmmPrior;
    use std::sync::Arc;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn setup_1d(y: f64, tau: f64) -> (Problem, Regularizer, RestorationOperator) {
        let prior = Arc::new(GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap());
        let ens = DegradationEnsemble::uniform(vec![LinearOperator::identity(1)], 1.0).unwrap();
        let reg = Regularizer::new(tau, prior, ens).unwrap();
        let restorer = reg.exact_restorer();
        let problem = Problem::new(LinearOperator::identity(1), scalar(y), 0.0).unwrap();
        (problem, reg, restorer)
    }

    #[test]
    fn unit_step_without_regularizer_hits_y() {
        let (p, reg, r) = setup_1d(3.25, 0.0);
        let (x, trace) = run(&p, &reg, &r, &SolverConfig::new(1.0, 1, 0)).unwrap();
        assert_eq!(x[0], 3.25);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn zero_step_keeps_initial_point() {
        let (p, reg, r) = setup_1d(1.0, 1.0);
        let mut cfg = SolverConfig::new(0.0, 20, 4);
        cfg.x0 = InitialPoint::Explicit(vec![0.7]);
        let (x, trace) = run(&p, &reg, &r, &cfg).unwrap();
        assert_eq!(x[0], 0.7);
        assert!(trace.records.iter().all(|r| r.step_sq == 0.0));
    }

    #[test]
    fn mean_iterate_contracts_at_linear_rate() {
        let (p, reg, r) = setup_1d(0.0, 1.0);
        let gamma = 0.2;
        let t = 5;
        let x0 = 4.0;
        let mut mean = 0.0;
        for seed in 0..200 {
            let mut cfg = SolverConfig::new(gamma, t, seed);
            cfg.x0 = InitialPoint::Explicit(vec![x0]);
            mean += run(&p, &reg, &r, &cfg).unwrap().0[0];
        }
        mean /= 200.0;
        let expected = x0 * (1.0f64 - 1.5 * gamma).powi(t as i32);
        assert!((mean - expected).abs() < 0.1 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn selection_strategies() {
        let ens = DegradationEnsemble::uniform(
            vec![LinearOperator::identity(2), LinearOperator::scale(2.0, 2), LinearOperator::scale(3.0, 2)],
            1.0,
        )
        .unwrap();
        let mut rng = rng::seeded(0);
        let cyc: Vec<usize> = (0..4)
            .map(|k| select_operator(&Selection::Cyclic, &ens, k, &mut rng).unwrap())
            .collect();
        assert_eq!(cyc, vec![0, 1, 2, 0]);
        assert!((0..10).all(|k| select_operator(&Selection::Fixed(2), &ens, k, &mut rng).unwrap() == 2));
        assert!(select_operator(&Selection::Fixed(3), &ens, 0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let (p, reg, r) = setup_1d(1.0, 1.0);
        let mut cfg = SolverConfig::new(0.3, 50, 9);
        cfg.diagnostics.f_value = true;
        cfg.diagnostics.true_grad_samples = Some(10);
        let a = run(&p, &reg, &r, &cfg).unwrap().1;
        let b = run(&p, &reg, &r, &cfg).unwrap().1;
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.records.iter().all(|r| r.f_value.is_some()));
    }

    #[test]
    fn divergence_is_reported() {
        let (p, reg, r) = setup_1d(1.0, 1.0);
        let mut cfg = SolverConfig::new(1e155, 50, 1);
        cfg.x0 = InitialPoint::Explicit(vec![1e150]);
        match run(&p, &reg, &r, &cfg) {
            Err(Error::Divergence { iteration, last_finite }) => {
                assert!(iteration >= 1);
                assert!(last_finite.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_restorer_sigma() {
        let (p, reg, _) = setup_1d(1.0, 1.0);
        let other = RestorationOperator::exact(Arc::clone(reg.prior()), 0.5).unwrap();
        assert!(run(&p, &reg, &other, &SolverConfig::new(0.1, 3, 0)).is_err());
    }
}
