//! Composite objective `f = g + h`.
//!
//! `g(x) = ½‖Ax − y‖²` and `h(x) = τ E_{H, s ~ N(Hx, σ²I)}[−log p(s | H)]`.
//! The gradient of `h` is `(τ/σ²) E[HᵀH (x − R*(s, H))]`; replacing the
//! expectation with one draw gives the stochastic gradient used by the
//! solver. For single-Gaussian priors `h` is quadratic and everything here
//! has a closed form, which the auditor relies on.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, ScalarAccumulator, VectorAccumulator, VectorEstimate};
use crate::operators::{DegradationEnsemble, LinearOperator};
use crate::oracle::gauss_hermite;
use crate::priors::{FactorCache, GmmPrior};
use crate::restoration::RestorationOperator;
use crate::rng::gaussian_noise;

/// Dense fallbacks (exact Lipschitz constants, `f*`) are used up to this dimension.
pub const DENSE_DIM_LIMIT: usize = 256;

/// Measurement problem `y = Ax + e`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub a: LinearOperator,
    pub y: DVector<f64>,
    /// Standard deviation of `e`; recorded for simulation, unused by the solver.
    pub noise_sigma: f64,
}

impl Problem {
    pub fn new(a: LinearOperator, y: DVector<f64>, noise_sigma: f64) -> Result<Self> {
        check_len("measurement length", a.out_dim(), y.len())?;
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::invalid("measurement noise must be non-negative"));
        }
        Ok(Self { a, y, noise_sigma })
    }

    pub fn dim(&self) -> usize {
        self.a.in_dim()
    }

    pub fn fidelity(&self, x: &DVector<f64>) -> Result<f64> {
        let r = self.a.apply(x)? - &self.y;
        Ok(0.5 * r.norm_squared())
    }

    pub fn fidelity_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.a.apply(x)? - &self.y;
        self.a.adjoint_apply(&r)
    }

    /// `‖AᵀA‖₂`, the Lipschitz constant of `∇g`.
    pub fn fidelity_lipschitz(&self) -> Result<f64> {
        linalg::spectral_norm_sym(self.dim(), 64, |v| self.a.gram_apply(v))
    }
}

/// Regularizer `h` with weight `τ` over a degradation ensemble.
#[derive(Debug, Clone)]
pub struct Regularizer {
    pub tau: f64,
    pub ens: DegradationEnsemble,
    cache: Arc<FactorCache>,
}

impl Regularizer {
    pub fn new(tau: f64, prior: Arc<GmmPrior>, ens: DegradationEnsemble) -> Result<Self> {
        Self::with_cache(tau, Arc::new(FactorCache::new(prior)), ens)
    }

    /// Shares factorizations with an exact restorer built on the same prior.
    pub fn with_cache(tau: f64, cache: Arc<FactorCache>, ens: DegradationEnsemble) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be non-negative, got {tau}")));
        }
        check_len("ensemble in_dim vs prior dim", cache.prior().dim(), ens.in_dim())?;
        Ok(Self { tau, ens, cache })
    }

    pub fn prior(&self) -> &Arc<GmmPrior> {
        self.cache.prior()
    }

    pub fn cache(&self) -> &Arc<FactorCache> {
        &self.cache
    }

    pub fn sigma(&self) -> f64 {
        self.ens.sigma()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::with_cache(tau, Arc::clone(&self.cache), self.ens.clone())
    }

    /// The exact MMSE restorer sharing this regularizer's factor cache.
    pub fn exact_restorer(&self) -> RestorationOperator {
        RestorationOperator::ExactMmse {
            cache: Arc::clone(&self.cache),
            sigma: self.sigma(),
        }
    }

    fn single_component(&self) -> Option<usize> {
        let comps = self.prior().components();
        let positive: Vec<usize> = (0..comps.len()).filter(|&k| comps[k].weight > 0.0).collect();
        (positive.len() == 1).then(|| positive[0])
    }

    /// Hessian of `h` for a single Gaussian: `τ Σ_i w_i H_iᵀ S_i⁻¹ H_i v`.
    pub fn curvature_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self
            .single_component()
            .ok_or_else(|| Error::Refused("curvature is constant only for a single Gaussian".into()))?;
        let mut out = DVector::zeros(v.len());
        for (h, &w) in self.ens.members().iter().zip(self.ens.weights()) {
            if w == 0.0 {
                continue;
            }
            let f = self.cache.get(h, self.sigma())?;
            out += h.adjoint_apply(&f.precision_apply(k, &h.apply(v)?)?)? * w;
        }
        Ok(out * self.tau)
    }
}

/// `(τ/σ²) HᵀH (x − R(Hx + n, H))` for one degradation and noise draw.
pub fn regularizer_term(
    reg: &Regularizer,
    restorer: &RestorationOperator,
    x: &DVector<f64>,
    h: &LinearOperator,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    let s = h.apply(x)? + noise;
    let residual = x - restorer.restore(&s, h)?;
    let sigma = reg.sigma();
    Ok(h.gram_apply(&residual)? * (reg.tau / (sigma * sigma)))
}

/// Exact `h(x)`: closed form for a single Gaussian, Gauss–Hermite quadrature
/// over `s` for mixtures whose members have `out_dim ≤ 4`.
pub fn reg_value_exact(reg: &Regularizer, x: &DVector<f64>) -> Result<f64> {
    check_len("regularizer input", reg.prior().dim(), x.len())?;
    let sigma = reg.sigma();
    let var = sigma * sigma;
    let mut total = 0.0;
    if let Some(k) = reg.single_component() {
        let mu = &reg.prior().components()[k].mean;
        for (h, &w) in reg.ens.members().iter().zip(reg.ens.weights()) {
            if w == 0.0 {
                continue;
            }
            let f = reg.cache.get(h, sigma)?;
            let d = h.apply(&(x - mu))?;
            let m = h.out_dim() as f64;
            let cross_entropy = 0.5
                * (m * (2.0 * std::f64::consts::PI).ln()
                    + f.log_det(k)
                    + d.dot(&f.precision_apply(k, &d)?)
                    + var * f.trace_precision(k));
            total += w * cross_entropy;
        }
        return Ok(reg.tau * total);
    }
    for (h, &w) in reg.ens.members().iter().zip(reg.ens.weights()) {
        if w == 0.0 {
            continue;
        }
        let m = h.out_dim();
        let order = match m {
            1 => 64,
            2 => 40,
            3 => 20,
            4 => 12,
            _ => {
                return Err(Error::Refused(format!(
                    "no closed form for a {}-component mixture with out_dim {m}; use reg_value_mc",
                    reg.prior().components().len()
                )))
            }
        };
        let f = reg.cache.get(h, sigma)?;
        let center = h.apply(x)?;
        let expectation = gaussian_expectation(&center, sigma, order, |s| {
            Ok(-f.evaluate(s)?.log_density)
        })?;
        total += w * expectation;
    }
    Ok(reg.tau * total)
}

/// `E[φ(s)]` for `s ~ N(center, σ²I)` by tensor Gauss–Hermite quadrature.
pub(crate) fn gaussian_expectation<F>(
    center: &DVector<f64>,
    sigma: f64,
    order: usize,
    mut phi: F,
) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let (nodes, weights) = gauss_hermite(order)?;
    let m = center.len();
    let norm = std::f64::consts::PI.powf(-(m as f64) / 2.0);
    let scale = std::f64::consts::SQRT_2 * sigma;
    let mut idx = vec![0usize; m];
    let mut total = 0.0;
    loop {
        let mut s = center.clone();
        let mut w = norm;
        for d in 0..m {
            s[d] += scale * nodes[idx[d]];
            w *= weights[idx[d]];
        }
        total += w * phi(&s)?;
        let mut d = 0;
        loop {
            if d == m {
                return Ok(total);
            }
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Monte Carlo `h(x)` with its standard error.
pub fn reg_value_mc<R: Rng + ?Sized>(
    reg: &Regularizer,
    x: &DVector<f64>,
    mc_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if mc_samples < 2 {
        return Err(Error::invalid("reg_value_mc needs at least 2 samples"));
    }
    check_len("regularizer input", reg.prior().dim(), x.len())?;
    let sigma = reg.sigma();
    let mut acc = ScalarAccumulator::default();
    for _ in 0..mc_samples {
        let (_, h) = reg.ens.sample_degradation(rng);
        let s = h.apply(x)? + gaussian_noise(rng, h.out_dim(), sigma);
        let lp = reg.cache.get(h, sigma)?.evaluate(&s)?.log_density;
        acc.push(-reg.tau * lp);
    }
    Ok((acc.mean(), acc.std_error()))
}

/// Monte Carlo `∇h(x) = (τ/σ²) E[HᵀH (x − R*(s, H))]` using the exact restorer.
pub fn reg_grad_exact<R: Rng + ?Sized>(
    reg: &Regularizer,
    x: &DVector<f64>,
    mc_samples: usize,
    rng: &mut R,
) -> Result<VectorEstimate> {
    if mc_samples == 0 {
        return Err(Error::invalid("reg_grad_exact needs at least one sample"));
    }
    check_len("regularizer input", reg.prior().dim(), x.len())?;
    let exact = reg.exact_restorer();
    let mut acc = VectorAccumulator::new(x.len());
    for _ in 0..mc_samples {
        let (_, h) = reg.ens.sample_degradation(rng);
        let noise = gaussian_noise(rng, h.out_dim(), reg.sigma());
        acc.push(&regularizer_term(reg, &exact, x, h, &noise)?);
    }
    Ok(acc.estimate())
}

/// Closed-form `∇h(x) = τ Σ_i w_i H_iᵀ S_i⁻¹ H_i (x − μ)` for a single Gaussian.
pub fn reg_grad_closed_form(reg: &Regularizer, x: &DVector<f64>) -> Result<DVector<f64>> {
    let k = reg
        .single_component()
        .ok_or_else(|| Error::Refused("closed-form gradient needs a single Gaussian".into()))?;
    let mu = &reg.prior().components()[k].mean;
    reg.curvature_apply(&(x - mu))
}

/// `∇̂f(x) = ∇g(x) + (1/batch) Σ_j (τ/σ²) H_jᵀH_j (x − R(s_j, H_j))`.
pub fn stochastic_grad<R: Rng + ?Sized>(
    problem: &Problem,
    reg: &Regularizer,
    restorer: &RestorationOperator,
    x: &DVector<f64>,
    rng: &mut R,
    batch: usize,
) -> Result<DVector<f64>> {
    if batch == 0 {
        return Err(Error::invalid("batch must be at least 1"));
    }
    let mut grad = problem.fidelity_grad(x)?;
    if reg.tau == 0.0 {
        return Ok(grad);
    }
    let mut sum: Option<DVector<f64>> = None;
    for _ in 0..batch {
        let (_, h) = reg.ens.sample_degradation(rng);
        let noise = gaussian_noise(rng, h.out_dim(), reg.sigma());
        let t = regularizer_term(reg, restorer, x, h, &noise)?;
        sum = Some(match sum {
            Some(acc) => acc + t,
            None => t,
        });
    }
    let mut term = sum.expect("batch >= 1");
    if batch > 1 {
        term /= batch as f64;
    }
    grad += term;
    Ok(grad)
}

/// Empirical `E‖∇̂f(x) − E∇̂f(x)‖²` at one point (single-draw gradients).
pub fn variance_probe<R: Rng + ?Sized>(
    problem: &Problem,
    reg: &Regularizer,
    restorer: &RestorationOperator,
    x: &DVector<f64>,
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if mc_samples < 2 {
        return Err(Error::invalid("variance_probe needs at least 2 samples"));
    }
    let mut acc = VectorAccumulator::new(x.len());
    for _ in 0..mc_samples {
        acc.push(&stochastic_grad(problem, reg, restorer, x, rng, 1)?);
    }
    Ok(acc.trace_variance())
}

/// `f(x) = g(x) + h(x)` with the exact regularizer value.
pub fn objective_value(problem: &Problem, reg: &Regularizer, x: &DVector<f64>) -> Result<f64> {
    Ok(problem.fidelity(x)? + reg_value_exact(reg, x)?)
}

/// Closed-form `∇f` for a single-Gaussian prior.
pub fn full_grad_closed_form(
    problem: &Problem,
    reg: &Regularizer,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(problem.fidelity_grad(x)? + reg_grad_closed_form(reg, x)?)
}

/// Lipschitz constant of `∇f`: exact `‖AᵀA + τQ‖₂` for a single Gaussian,
/// otherwise the bound `‖AᵀA‖₂ + (τ/σ²) max_i ‖H_iᵀH_i‖₂`.
pub fn lipschitz_estimate(problem: &Problem, reg: &Regularizer) -> Result<(f64, bool)> {
    let n = problem.dim();
    if reg.single_component().is_some() {
        let l = linalg::spectral_norm_sym(n, 64, |v| {
            Ok(problem.a.gram_apply(v)? + reg.curvature_apply(v)?)
        })?;
        return Ok((l, true));
    }
    let mut worst: f64 = 0.0;
    for h in reg.ens.members() {
        worst = worst.max(linalg::spectral_norm_sym(n, 64, |v| h.gram_apply(v))?);
    }
    let sigma = reg.sigma();
    Ok((
        problem.fidelity_lipschitz()? + reg.tau / (sigma * sigma) * worst,
        false,
    ))
}

/// Exact minimizer and minimum of `f` for a single-Gaussian prior (dense solve).
pub fn minimize_closed_form(problem: &Problem, reg: &Regularizer) -> Result<(DVector<f64>, f64)> {
    let n = problem.dim();
    if n > DENSE_DIM_LIMIT {
        return Err(Error::Refused(format!(
            "closed-form minimizer limited to n <= {DENSE_DIM_LIMIT}"
        )));
    }
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        hess.set_column(j, &(problem.a.gram_apply(&e)? + reg.curvature_apply(&e)?));
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    // f is quadratic: ∇f(x) = Hx + ∇f(0)
    let rhs = -full_grad_closed_form(problem, reg, &DVector::zeros(n))?;
    let eps = 1e-13 * hess.amax().max(f64::MIN_POSITIVE);
    let x = hess
        .svd(true, true)
        .solve(&rhs, eps)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let f = objective_value(problem, reg, &x)?;
    Ok((x, f))
}
