//! Gaussian-mixture image prior and the linear-Gaussian observation model.
//!
//! For `x ~ Σ_k w_k N(μ_k, Σ_k)` and `s = Hx + n`, `n ~ N(0, σ²I)`, the
//! observation density is again a mixture,
//! `p(s | H) = Σ_k w_k N(s; Hμ_k, HΣ_kHᵀ + σ²I)`,
//! and the posterior mean `E[x | s, H]` is a responsibility-weighted sum of
//! per-component Kalman updates. These are computed exactly in
//! [`ObservationFactors`].

mod generate;
pub mod io;
mod observation;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub use generate::{GmmRecipe, ImageRecipe};
pub use observation::{
    mmse_restore, observation_logpdf, observation_score, FactorCache, ObservationFactors,
    ObservationModel, PosteriorEval,
};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::rng::standard_normal;

/// Largest jitter accepted when validating a full covariance.
const PRIOR_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Diagonal(d) => d.component_mul(v),
            Covariance::Full(m) => m * v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: Covariance,
    /// Lower Cholesky factor (full) or entrywise square root (diagonal).
    sqrt: Covariance,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        check_len("component covariance", mean.len(), cov.dim())?;
        let sqrt = match &cov {
            Covariance::Diagonal(d) => {
                if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::invalid(
                        "diagonal covariance entries must be strictly positive",
                    ));
                }
                Covariance::Diagonal(d.map(f64::sqrt))
            }
            Covariance::Full(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::invalid("covariance must be square"));
                }
                let asym = (m - m.transpose()).amax();
                if asym > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric (max asymmetry {asym:e})"
                    )));
                }
                let (chol, _) = linalg::cholesky_jittered(m, PRIOR_JITTER, "prior covariance")
                    .map_err(|_| {
                        Error::invalid("covariance is not strictly positive definite")
                    })?;
                Covariance::Full(chol.l())
            }
        };
        Ok(Self {
            weight,
            mean,
            cov,
            sqrt,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal(rng, self.mean.len());
        &self.mean + self.sqrt.mul_vec(&z)
    }
}

/// Gaussian mixture prior `p_x` over `R^n`.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GmmPrior {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("prior needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("prior dimension must be positive"));
        }
        for c in &components {
            check_len("prior component dimension", dim, c.mean.len())?;
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::invalid("component weights must be non-negative"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("component weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, cov)?])
    }

    /// Isotropic single Gaussian `N(mean, variance·I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::gaussian(mean, Covariance::Diagonal(DVector::from_element(n, variance)))
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_single_gaussian(&self) -> bool {
        self.components.iter().filter(|c| c.weight > 0.0).count() == 1
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Ancestral sample: component by weight, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut chosen = None;
        for (i, c) in self.components.iter().enumerate() {
            if c.weight > 0.0 {
                cum += c.weight;
                chosen = Some(i);
                if u < cum {
                    break;
                }
            }
        }
        self.components[chosen.expect("validated weights")].sample(rng)
    }

    /// Log-density `log p_x(x)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_len("prior density input", self.dim, x.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + gaussian_log_density(x, &c.mean, &c.sqrt))
            .collect();
        Ok(linalg::log_sum_exp(&terms))
    }
}

/// `log N(x; mean, LLᵀ)` given the square-root factor.
fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, sqrt: &Covariance) -> f64 {
    let n = x.len() as f64;
    let r = x - mean;
    let (quad, log_det) = match sqrt {
        Covariance::Diagonal(s) => {
            let z = r.component_div(s);
            (z.norm_squared(), 2.0 * s.iter().map(|v| v.ln()).sum::<f64>())
        }
        Covariance::Full(l) => {
            let z = l
                .solve_lower_triangular(&r)
                .expect("validated Cholesky factor");
            (
                z.norm_squared(),
                2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            )
        }
    };
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn near_degenerate_sample_sits_on_mean() {
        let mu = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let prior = GmmPrior::isotropic(mu.clone(), 1e-12).unwrap();
        let mut r = rng::seeded(5);
        let x = prior.sample(&mut r);
        assert!((x - mu).amax() < 1e-5);
    }

    #[test]
    fn standard_normal_moments() {
        let prior = GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap();
        let mut r = rng::seeded(6);
        let mut acc = linalg::ScalarAccumulator::default();
        for _ in 0..100_000 {
            acc.push(prior.sample(&mut r)[0]);
        }
        assert!(acc.mean().abs() < 0.02);
        assert!((acc.variance() - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_weight_component_never_sampled() {
        let a = GaussianComponent::new(
            1.0,
            DVector::from_element(1, -10.0),
            Covariance::Diagonal(DVector::from_element(1, 0.01)),
        )
        .unwrap();
        let b = GaussianComponent::new(
            0.0,
            DVector::from_element(1, 10.0),
            Covariance::Diagonal(DVector::from_element(1, 0.01)),
        )
        .unwrap();
        let prior = GmmPrior::new(vec![a, b]).unwrap();
        let mut r = rng::seeded(7);
        assert!((0..2000).all(|_| prior.sample(&mut r)[0] < 0.0));
    }

    #[test]
    fn rejects_indefinite_or_asymmetric_covariance() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianComponent::new(1.0, DVector::zeros(2), Covariance::Full(bad)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianComponent::new(1.0, DVector::zeros(2), Covariance::Full(asym)).is_err());
        assert!(GmmPrior::isotropic(DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn full_and_diagonal_densities_agree() {
        let d = DVector::from_column_slice(&[0.5, 2.0]);
        let diag = GmmPrior::gaussian(DVector::zeros(2), Covariance::Diagonal(d.clone())).unwrap();
        let full =
            GmmPrior::gaussian(DVector::zeros(2), Covariance::Full(DMatrix::from_diagonal(&d)))
                .unwrap();
        let x = DVector::from_column_slice(&[0.3, -1.2]);
        let a = diag.log_density(&x).unwrap();
        let b = full.log_density(&x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
