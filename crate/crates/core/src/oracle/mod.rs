//! Brute-force reference evaluators for small instances.
//!
//! Integrals over `x` use trapezoid tensor grids (n ≤ 2) spanning ±8 prior
//! standard deviations around every component; integrals over `s`, which
//! always carry the Gaussian weight `G_σ(s − Hx)`, use tensor Gauss–Hermite
//! rules. Nothing here calls the closed-form code paths in `priors` or
//! `objective`, so the two can be compared.

mod quadrature;

use nalgebra::{DMatrix, DVector};

pub use quadrature::{gauss_hermite, pairwise_sum};

use crate::error::{check_len, Error, Result};
use crate::objective::Regularizer;
use crate::operators::LinearOperator;
use crate::priors::{GmmPrior, ObservationModel};

pub const MAX_GRID_NODES: usize = 10_000_000;
const LOG_UNDERFLOW: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Trapezoid tensor grid over the prior support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub points_per_axis: usize,
    /// Half-width of the support in prior standard deviations.
    pub radius: f64,
    /// Gauss–Hermite order per `s` axis.
    pub hermite_order: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            points_per_axis: 4001,
            radius: 8.0,
            hermite_order: 40,
        }
    }
}

impl QuadratureGrid {
    pub fn new(points_per_axis: usize, radius: f64, hermite_order: usize) -> Self {
        Self {
            points_per_axis,
            radius,
            hermite_order,
        }
    }
}

/// Prior density tabulated on a grid: nodes and `log(trapezoid weight · p_x)`.
#[derive(Debug, Clone)]
pub struct PriorTable {
    dim: usize,
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl PriorTable {
    pub fn new(prior: &GmmPrior, grid: &QuadratureGrid) -> Result<Self> {
        let n = prior.dim();
        if n > 2 {
            return Err(Error::Refused(format!("tensor grids support n <= 2, got {n}")));
        }
        let p = grid.points_per_axis;
        if p < 3 {
            return Err(Error::invalid("grid needs at least 3 points per axis"));
        }
        let total = p.checked_pow(n as u32).unwrap_or(usize::MAX);
        if total > MAX_GRID_NODES {
            return Err(Error::Refused(format!(
                "grid of {total} nodes exceeds {MAX_GRID_NODES}"
            )));
        }
        let mut axes = Vec::with_capacity(n);
        for d in 0..n {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in prior.components() {
                let sd = c.cov.to_dense()[(d, d)].sqrt();
                lo = lo.min(c.mean[d] - grid.radius * sd);
                hi = hi.max(c.mean[d] + grid.radius * sd);
            }
            let step = (hi - lo) / (p - 1) as f64;
            let pts: Vec<f64> = (0..p).map(|i| lo + step * i as f64).collect();
            let w: Vec<f64> = (0..p)
                .map(|i| if i == 0 || i == p - 1 { 0.5 * step } else { step })
                .collect();
            axes.push((pts, w));
        }
        let mut nodes = Vec::with_capacity(total * n);
        let mut log_weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let mut x = DVector::zeros(n);
            let mut w = 1.0;
            for d in 0..n {
                x[d] = axes[d].0[idx[d]];
                w *= axes[d].1[idx[d]];
            }
            nodes.extend(x.iter());
            log_weights.push(w.ln() + prior.log_density(&x)?);
            for d in 0..n {
                idx[d] += 1;
                if idx[d] < p {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            dim: n,
            nodes,
            log_weights,
        })
    }

    fn len(&self) -> usize {
        self.log_weights.len()
    }

    /// Log of the unnormalized posterior weights `log(w_j p_x(x_j) G_σ(s − Hx_j))`.
    fn posterior_logs(&self, h: &DMatrix<f64>, sigma: f64, s: &DVector<f64>) -> Vec<f64> {
        let m = h.nrows();
        let var = sigma * sigma;
        let log_norm = -0.5 * m as f64 * (2.0 * std::f64::consts::PI * var).ln();
        (0..self.len())
            .map(|j| {
                let x = &self.nodes[j * self.dim..(j + 1) * self.dim];
                let mut quad = 0.0;
                for r in 0..m {
                    let mut hx = 0.0;
                    for (c, xc) in x.iter().enumerate() {
                        hx += h[(r, c)] * xc;
                    }
                    let d = s[r] - hx;
                    quad += d * d;
                }
                self.log_weights[j] + log_norm - 0.5 * quad / var
            })
            .collect()
    }

    /// `log p(s | H)` by quadrature.
    pub fn log_marginal(&self, h: &DMatrix<f64>, sigma: f64, s: &DVector<f64>) -> Result<f64> {
        let logs = self.posterior_logs(h, sigma, s);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum = pairwise_sum(&logs.iter().map(|l| (l - max).exp()).collect::<Vec<_>>());
        let log_p = max + sum.ln();
        if !(log_p > LOG_UNDERFLOW) {
            return Err(Error::Refused(
                "quadrature denominator below 1e-300; grid too coarse".into(),
            ));
        }
        Ok(log_p)
    }

    /// `E[x | s, H]` by quadrature.
    pub fn posterior_mean(
        &self,
        h: &DMatrix<f64>,
        sigma: f64,
        s: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let logs = self.posterior_logs(h, sigma, s);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max + (self.len() as f64).ln() > LOG_UNDERFLOW) {
            return Err(Error::Refused(
                "quadrature denominator below 1e-300; grid too coarse".into(),
            ));
        }
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let denom = pairwise_sum(&w);
        let mut out = DVector::zeros(self.dim);
        for d in 0..self.dim {
            let terms: Vec<f64> = (0..self.len())
                .map(|j| w[j] * self.nodes[j * self.dim + d])
                .collect();
            out[d] = pairwise_sum(&terms) / denom;
        }
        Ok(out)
    }
}

fn dense_small(h: &LinearOperator) -> Result<DMatrix<f64>> {
    if h.out_dim() > 4 {
        return Err(Error::Refused(format!(
            "oracle s-integrals support out_dim <= 4, got {}",
            h.out_dim()
        )));
    }
    h.to_dense()
}

/// Tensor Gauss–Hermite expectation of a vector function under `N(center, σ²I)`.
fn hermite_expectation<F>(
    center: &DVector<f64>,
    sigma: f64,
    order: usize,
    out_len: usize,
    mut phi: F,
) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let (nodes, weights) = gauss_hermite(order)?;
    let m = center.len();
    let norm = std::f64::consts::PI.powf(-(m as f64) / 2.0);
    let scale = std::f64::consts::SQRT_2 * sigma;
    let total = order.pow(m as u32);
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(total); out_len];
    let mut idx = vec![0usize; m];
    for _ in 0..total {
        let mut s = center.clone();
        let mut w = norm;
        for d in 0..m {
            s[d] += scale * nodes[idx[d]];
            w *= weights[idx[d]];
        }
        let v = phi(&s)?;
        for (t, vi) in terms.iter_mut().zip(v.iter()) {
            t.push(w * vi);
        }
        for d in 0..m {
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(DVector::from_iterator(out_len, terms.iter().map(|t| pairwise_sum(t))))
}

/// Posterior mean `∫ x G_σ(s − Hx) p_x(x) dx / p(s | H)` by quadrature.
pub fn oracle_mmse(
    prior: &GmmPrior,
    obs: &ObservationModel,
    s: &DVector<f64>,
    grid: &QuadratureGrid,
) -> Result<DVector<f64>> {
    check_len("oracle observation", obs.h.out_dim(), s.len())?;
    let table = PriorTable::new(prior, grid)?;
    table.posterior_mean(&obs.h.to_dense()?, obs.sigma, s)
}

/// `log p(s | H)` by quadrature.
pub fn oracle_logpdf(
    prior: &GmmPrior,
    obs: &ObservationModel,
    s: &DVector<f64>,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_len("oracle observation", obs.h.out_dim(), s.len())?;
    let table = PriorTable::new(prior, grid)?;
    table.log_marginal(&obs.h.to_dense()?, obs.sigma, s)
}

fn reg_value_with_table(
    reg: &Regularizer,
    table: &PriorTable,
    x: &DVector<f64>,
    order: usize,
) -> Result<f64> {
    let sigma = reg.sigma();
    let mut total = 0.0;
    for (h, &w) in reg.ens.members().iter().zip(reg.ens.weights()) {
        if w == 0.0 {
            continue;
        }
        let hd = dense_small(h)?;
        let center = &hd * x;
        let e = hermite_expectation(&center, sigma, order, 1, |s| {
            Ok(DVector::from_element(1, table.log_marginal(&hd, sigma, s)?))
        })?;
        total -= w * e[0];
    }
    Ok(reg.tau * total)
}

/// `h(x) = −τ Σ_H p(H) ∫ G_σ(s − Hx) log p(s | H) ds` with both integrals by quadrature.
pub fn oracle_reg_value(reg: &Regularizer, x: &DVector<f64>, grid: &QuadratureGrid) -> Result<f64> {
    check_len("oracle regularizer input", reg.prior().dim(), x.len())?;
    let table = PriorTable::new(reg.prior(), grid)?;
    reg_value_with_table(reg, &table, x, grid.hermite_order)
}

/// Two independent quadrature routes to `∇h(x)`.
#[derive(Debug, Clone)]
pub struct OracleGrad {
    /// Central finite differences of [`oracle_reg_value`], step `1e-5`.
    pub finite_difference: DVector<f64>,
    /// Quadrature of `(τ/σ²) E[HᵀH (x − R*(s, H))]` with `R*` from the grid.
    pub quadrature: DVector<f64>,
}

pub const FD_STEP: f64 = 1e-5;

pub fn oracle_grad(reg: &Regularizer, x: &DVector<f64>, grid: &QuadratureGrid) -> Result<OracleGrad> {
    let n = reg.prior().dim();
    check_len("oracle gradient input", n, x.len())?;
    let table = PriorTable::new(reg.prior(), grid)?;
    let order = grid.hermite_order;

    let mut fd = DVector::zeros(n);
    for d in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[d] += FD_STEP;
        minus[d] -= FD_STEP;
        fd[d] = (reg_value_with_table(reg, &table, &plus, order)?
            - reg_value_with_table(reg, &table, &minus, order)?)
            / (2.0 * FD_STEP);
    }

    let sigma = reg.sigma();
    let mut quad = DVector::zeros(n);
    for (h, &w) in reg.ens.members().iter().zip(reg.ens.weights()) {
        if w == 0.0 {
            continue;
        }
        let hd = dense_small(h)?;
        let center = &hd * x;
        let mean_restored = hermite_expectation(&center, sigma, order, n, |s| {
            table.posterior_mean(&hd, sigma, s)
        })?;
        let residual = x - mean_restored;
        quad += hd.transpose() * (&hd * residual) * w;
    }
    quad *= reg.tau / (sigma * sigma);
    Ok(OracleGrad {
        finite_difference: fd,
        quadrature: quad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DegradationEnsemble;
    use crate::priors::{Covariance, GaussianComponent};
    use std::sync::Arc;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn std_normal() -> GmmPrior {
        GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap()
    }

    #[test]
    fn one_dimensional_posterior_mean() {
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        let x = oracle_mmse(&std_normal(), &obs, &scalar(2.0), &QuadratureGrid::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_mixture_centered_observation() {
        let comp = |m: f64| {
            GaussianComponent::new(0.5, scalar(m), Covariance::Diagonal(scalar(0.04))).unwrap()
        };
        let prior = GmmPrior::new(vec![comp(1.0), comp(-1.0)]).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        let x = oracle_mmse(&prior, &obs, &scalar(0.0), &QuadratureGrid::default()).unwrap();
        assert!(x[0].abs() < 1e-10);
    }

    fn gaussian_reg(member: LinearOperator) -> Regularizer {
        let ens = DegradationEnsemble::uniform(vec![member], 1.0).unwrap();
        Regularizer::new(1.0, Arc::new(std_normal()), ens).unwrap()
    }

    #[test]
    fn reg_value_closed_forms() {
        let grid = QuadratureGrid::new(2001, 8.0, 40);
        let reg = gaussian_reg(LinearOperator::identity(1));
        let h0 = oracle_reg_value(&reg, &scalar(0.0), &grid).unwrap();
        let expected = 0.5 * (4.0 * std::f64::consts::PI).ln() + 0.25;
        assert!((h0 - expected).abs() < 1e-6);
        let h15 = oracle_reg_value(&reg, &scalar(1.5), &grid).unwrap();
        assert!((h15 - h0 - 1.5 * 1.5 / 4.0).abs() < 1e-6);

        let dead = gaussian_reg(LinearOperator::scale(0.0, 1));
        let a = oracle_reg_value(&dead, &scalar(-1.0), &grid).unwrap();
        let b = oracle_reg_value(&dead, &scalar(2.0), &grid).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn grad_routes_agree_on_gaussian() {
        let grid = QuadratureGrid::new(2001, 8.0, 40);
        let reg = gaussian_reg(LinearOperator::identity(1));
        let g = oracle_grad(&reg, &scalar(2.0), &grid).unwrap();
        assert!((g.finite_difference[0] - 1.0).abs() < 1e-5);
        assert!((g.quadrature[0] - 1.0).abs() < 1e-5);
        let g0 = oracle_grad(&reg, &scalar(0.0), &grid).unwrap();
        assert!(g0.quadrature[0].abs() < 1e-8);
        assert!(g0.finite_difference[0].abs() < 1e-8);
    }

    #[test]
    fn halving_spacing_shrinks_error() {
        // coarse grids where the trapezoid error is still above round-off
        let obs = ObservationModel::new(LinearOperator::identity(1), 0.3).unwrap();
        let prior = std_normal();
        let exact = 1.7 / (1.0 + 0.09);
        let err = |p| {
            (oracle_mmse(&prior, &obs, &scalar(1.7), &QuadratureGrid::new(p, 8.0, 20)).unwrap()[0]
                - exact)
                .abs()
        };
        let coarse = err(17);
        let fine = err(33);
        assert!(coarse > 1e-12);
        assert!(fine * 3.0 <= coarse, "{coarse} vs {fine}");
    }

    #[test]
    fn isotropic_result_is_rotation_equivariant() {
        let prior = GmmPrior::isotropic(DVector::zeros(2), 1.0).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(2), 0.8).unwrap();
        let grid = QuadratureGrid::new(401, 8.0, 20);
        let s = DVector::from_column_slice(&[1.2, -0.4]);
        let theta: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let a = oracle_mmse(&prior, &obs, &(&rot * &s), &grid).unwrap();
        let b = &rot * oracle_mmse(&prior, &obs, &s, &grid).unwrap();
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn refuses_large_problems() {
        let prior = GmmPrior::isotropic(DVector::zeros(3), 1.0).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(3), 1.0).unwrap();
        assert!(matches!(
            oracle_mmse(&prior, &obs, &DVector::zeros(3), &QuadratureGrid::default()),
            Err(Error::Refused(_))
        ));
        let prior = GmmPrior::isotropic(DVector::zeros(2), 1.0).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(2), 1.0).unwrap();
        assert!(matches!(
            oracle_mmse(&prior, &obs, &DVector::zeros(2), &QuadratureGrid::new(5000, 8.0, 20)),
            Err(Error::Refused(_))
        ));
    }
}
