//! Empirical check of the averaged-gradient convergence bound
//! `mean ‖∇f(x^{k−1})‖² ≤ (2/(γt))(f(x⁰) − f*) + γLν² + ε²`.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SolverConfig, Trace};
use crate::error::{Error, Result};
use crate::objective::{self, Problem, Regularizer};
use crate::restoration::{measure_bias, RestorationOperator};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    pub slack: f64,
    /// Monte Carlo samples per `∇f` evaluation when no closed form exists.
    pub grad_samples: usize,
    pub variance_samples: usize,
    pub bias_samples: usize,
    /// Trajectory points added to the caller's probes.
    pub trajectory_probes: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            slack: 0.05,
            grad_samples: 10_000,
            variance_samples: 2_000,
            bias_samples: 2_000,
            trajectory_probes: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub l_hat: f64,
    pub l_exact: bool,
    pub nu2_hat: f64,
    pub epsilon_hat: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub seeds: usize,
    pub f_x0: f64,
    pub f_star_hat: f64,
    pub f_star_exact: bool,
    pub lhs: f64,
    /// Mean of `‖∇f‖²` over the second half of the iterations.
    pub lhs_plateau: f64,
    pub rhs_optimization: f64,
    pub rhs_variance: f64,
    pub rhs_bias: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        kv("L_hat", format!("{:e}", self.l_hat));
        kv("L_exact", self.l_exact.to_string());
        kv("nu2_hat", format!("{:e}", self.nu2_hat));
        kv("epsilon_hat", format!("{:e}", self.epsilon_hat));
        kv("gamma", format!("{:e}", self.gamma));
        kv("iterations", self.iterations.to_string());
        kv("seeds", self.seeds.to_string());
        kv("f_x0", format!("{:e}", self.f_x0));
        kv("f_star_hat", format!("{:e}", self.f_star_hat));
        kv("f_star_exact", self.f_star_exact.to_string());
        kv("lhs", format!("{:e}", self.lhs));
        kv("lhs_plateau", format!("{:e}", self.lhs_plateau));
        kv("rhs_optimization", format!("{:e}", self.rhs_optimization));
        kv("rhs_variance", format!("{:e}", self.rhs_variance));
        kv("rhs_bias", format!("{:e}", self.rhs_bias));
        kv("rhs", format!("{:e}", self.rhs));
        kv("slack", format!("{}", self.slack));
        kv("pass", self.pass.to_string());
        for n in &self.notes {
            kv("note", n.clone());
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn true_grad(
    problem: &Problem,
    reg: &Regularizer,
    x: &DVector<f64>,
    samples: usize,
    rng: &mut rng::StreamRng,
) -> Result<DVector<f64>> {
    if reg.prior().is_single_gaussian() {
        objective::full_grad_closed_form(problem, reg, x)
    } else {
        Ok(problem.fidelity_grad(x)? + objective::reg_grad_exact(reg, x, samples, rng)?.mean)
    }
}

/// Audits runs that share `(problem, reg, restorer)` and one step size and
/// iteration count. Every trace must carry its iterates.
pub fn audit_convergence(
    problem: &Problem,
    reg: &Regularizer,
    restorer: &RestorationOperator,
    runs: &[(SolverConfig, Trace)],
    probes: &[DVector<f64>],
    opts: &AuditOptions,
) -> Result<AuditReport> {
    if runs.is_empty() {
        return Err(Error::Refused("audit needs at least one run".into()));
    }
    let (cfg0, _) = &runs[0];
    let (gamma, t, batch) = (cfg0.gamma, cfg0.iterations, cfg0.batch);
    for (cfg, trace) in runs {
        if cfg.gamma != gamma || cfg.iterations != t || cfg.batch != batch || cfg.tau != cfg0.tau {
            return Err(Error::invalid("audited runs must share gamma, iterations, batch and tau"));
        }
        if trace.iterates.len() != t + 1 {
            return Err(Error::Refused(
                "audit needs recorded iterates; enable diagnostics.record_iterates".into(),
            ));
        }
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("audit needs gamma > 0"));
    }
    let owned;
    let reg = match cfg0.tau {
        Some(tau) if tau != reg.tau => {
            owned = reg.with_tau(tau)?;
            &owned
        }
        _ => reg,
    };
    let mut notes = Vec::new();

    let (l_hat, l_exact) = objective::lipschitz_estimate(problem, reg)?;
    if !l_exact {
        notes.push("L_hat is the upper bound ||A^T A|| + (tau/sigma^2) max ||H^T H||".into());
    }

    let per_run: Vec<Result<Vec<f64>>> = runs
        .par_iter()
        .map(|(cfg, trace)| {
            let mut rng = rng::stream(opts.seed ^ cfg.seed.rotate_left(17), rng::STREAM_PROBE);
            trace.iterates[..t]
                .iter()
                .map(|x| Ok(true_grad(problem, reg, x, opts.grad_samples, &mut rng)?.norm_squared()))
                .collect()
        })
        .collect();
    let mut lhs_sum = 0.0;
    let mut plateau_sum = 0.0;
    let half = t / 2;
    for g in per_run {
        let g = g?;
        lhs_sum += g.iter().sum::<f64>();
        plateau_sum += g[half..].iter().sum::<f64>();
    }
    let seeds = runs.len();
    let lhs = lhs_sum / (seeds * t) as f64;
    let lhs_plateau = plateau_sum / (seeds * (t - half)) as f64;

    let mut all_probes: Vec<DVector<f64>> = probes.to_vec();
    if opts.trajectory_probes > 0 {
        let iters = &runs[0].1.iterates;
        for j in 0..opts.trajectory_probes {
            let idx = j * t / opts.trajectory_probes.max(1);
            all_probes.push(iters[idx.min(t)].clone());
        }
    }
    if all_probes.is_empty() {
        return Err(Error::Refused("audit needs at least one probe point".into()));
    }

    let nu2_each: Vec<Result<f64>> = all_probes
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let mut rng = rng::stream(opts.seed.wrapping_add(j as u64 + 1), rng::STREAM_PROBE);
            objective::variance_probe(problem, reg, restorer, x, opts.variance_samples, &mut rng)
        })
        .collect();
    let mut nu2_hat: f64 = 0.0;
    for v in nu2_each {
        nu2_hat = nu2_hat.max(v?);
    }
    nu2_hat /= batch as f64;

    let epsilon_hat = if restorer.is_exact() {
        0.0
    } else {
        let mut rng = rng::stream(opts.seed, rng::STREAM_PROBE);
        let report = measure_bias(
            restorer,
            reg.prior(),
            &reg.ens,
            &all_probes,
            reg.tau,
            opts.bias_samples,
            &mut rng,
        )?;
        notes.push(format!("epsilon_hat: {}", report.note));
        report.epsilon_hat
    };

    let f_x0 = runs
        .iter()
        .map(|(_, tr)| objective::objective_value(problem, reg, &tr.iterates[0]))
        .sum::<Result<f64>>()?
        / seeds as f64;
    let (f_star_hat, f_star_exact) = if reg.prior().is_single_gaussian() {
        (objective::minimize_closed_form(problem, reg)?.1, true)
    } else {
        notes.push("f_star_hat is the lowest f observed on the trajectories".into());
        let mut best = f64::INFINITY;
        for (_, tr) in runs {
            for x in &tr.iterates {
                best = best.min(objective::objective_value(problem, reg, x)?);
            }
        }
        (best, false)
    };

    let rhs_optimization = 2.0 / (gamma * t as f64) * (f_x0 - f_star_hat);
    let rhs_variance = gamma * l_hat * nu2_hat;
    let rhs_bias = epsilon_hat * epsilon_hat;
    let rhs = rhs_optimization + rhs_variance + rhs_bias;
    if gamma > 1.0 / l_hat {
        notes.push("gamma exceeds 1/L_hat; the bound does not apply".into());
    }
    Ok(AuditReport {
        l_hat,
        l_exact,
        nu2_hat,
        epsilon_hat,
        gamma,
        iterations: t,
        seeds,
        f_x0,
        f_star_hat,
        f_star_exact,
        lhs,
        lhs_plateau,
        rhs_optimization,
        rhs_variance,
        rhs_bias,
        rhs,
        slack: opts.slack,
        pass: lhs <= rhs * (1.0 + opts.slack),
        notes,
    })
}
