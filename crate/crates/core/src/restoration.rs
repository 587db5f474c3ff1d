//! Restoration operators `R(s, H)`: the exact MMSE map and bias-injected
//! wrappers standing in for an imperfect learned restorer.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{VectorAccumulator, VectorEstimate};
use crate::operators::{DegradationEnsemble, LinearOperator};
use crate::priors::{FactorCache, GmmPrior};
use crate::rng::gaussian_noise;

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Adds a fixed vector `c` to the restored image.
    ConstantOffset(DVector<f64>),
    /// Scales the deviation from the prior mean by `λ`.
    Gain(f64),
    /// Blends with a periodic 3-tap box filter: `(1 − a)·R + a·box(R)`.
    Smoothing(f64),
}

#[derive(Debug, Clone)]
pub enum RestorationOperator {
    ExactMmse {
        cache: Arc<FactorCache>,
        sigma: f64,
    },
    Biased {
        inner: Box<RestorationOperator>,
        perturbation: Perturbation,
    },
}

impl RestorationOperator {
    pub fn exact(prior: Arc<GmmPrior>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self::ExactMmse {
            cache: Arc::new(FactorCache::new(prior)),
            sigma,
        })
    }

    pub fn biased(self, perturbation: Perturbation) -> Result<Self> {
        match &perturbation {
            Perturbation::ConstantOffset(c) => {
                check_len("offset perturbation", self.prior().dim(), c.len())?
            }
            Perturbation::Gain(g) if !g.is_finite() => {
                return Err(Error::invalid("gain must be finite"))
            }
            Perturbation::Smoothing(a) if !(0.0..=1.0).contains(a) => {
                return Err(Error::invalid("smoothing strength must lie in [0, 1]"))
            }
            _ => {}
        }
        Ok(Self::Biased {
            inner: Box::new(self),
            perturbation,
        })
    }

    /// The exact MMSE operator at the root of any wrapper chain.
    pub fn root(&self) -> &RestorationOperator {
        match self {
            Self::ExactMmse { .. } => self,
            Self::Biased { inner, .. } => inner.root(),
        }
    }

    pub fn cache(&self) -> &Arc<FactorCache> {
        match self.root() {
            Self::ExactMmse { cache, .. } => cache,
            Self::Biased { .. } => unreachable!(),
        }
    }

    pub fn prior(&self) -> &Arc<GmmPrior> {
        self.cache().prior()
    }

    pub fn sigma(&self) -> f64 {
        match self.root() {
            Self::ExactMmse { sigma, .. } => *sigma,
            Self::Biased { .. } => unreachable!(),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Self::ExactMmse { .. })
    }

    pub fn restore(&self, s: &DVector<f64>, h: &LinearOperator) -> Result<DVector<f64>> {
        match self {
            Self::ExactMmse { cache, sigma } => Ok(cache.get(h, *sigma)?.evaluate(s)?.mean),
            Self::Biased {
                inner,
                perturbation,
            } => {
                let r = inner.restore(s, h)?;
                Ok(match perturbation {
                    Perturbation::ConstantOffset(c) => r + c,
                    Perturbation::Gain(g) => {
                        let m = self.prior().mean();
                        &m + (r - &m) * *g
                    }
                    Perturbation::Smoothing(a) => {
                        let n = r.len();
                        DVector::from_fn(n, |i, _| {
                            let boxed = (r[(i + n - 1) % n] + r[i] + r[(i + 1) % n]) / 3.0;
                            (1.0 - a) * r[i] + a * boxed
                        })
                    }
                })
            }
        }
    }
}

/// Sup-norm bias estimate over a set of probe points.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub epsilon_hat: f64,
    pub per_point: Vec<(DVector<f64>, f64)>,
    pub samples_per_point: usize,
    /// Describes the probe domain: the bound is empirical, not global.
    pub note: String,
}

/// Monte Carlo estimate of `(τ/σ²) E[HᵀH (R*(s, H) − R(s, H))]` at `x`,
/// with `H ~ ens` and `s = Hx + n`.
pub fn bias_estimate<R: Rng + ?Sized>(
    restorer: &RestorationOperator,
    prior: &Arc<GmmPrior>,
    ens: &DegradationEnsemble,
    x: &DVector<f64>,
    tau: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<VectorEstimate> {
    if mc_samples == 0 {
        return Err(Error::invalid("mc_samples must be at least 1"));
    }
    check_len("bias probe point", prior.dim(), x.len())?;
    let sigma = ens.sigma();
    let exact = if Arc::ptr_eq(restorer.prior(), prior) && restorer.sigma() == sigma {
        RestorationOperator::ExactMmse {
            cache: Arc::clone(restorer.cache()),
            sigma,
        }
    } else {
        RestorationOperator::exact(Arc::clone(prior), sigma)?
    };
    let scale = tau / (sigma * sigma);
    let mut acc = VectorAccumulator::new(x.len());
    for _ in 0..mc_samples {
        let (_, h) = ens.sample_degradation(rng);
        let s = h.apply(x)? + gaussian_noise(rng, h.out_dim(), sigma);
        let gap = exact.restore(&s, h)? - restorer.restore(&s, h)?;
        acc.push(&(h.gram_apply(&gap)? * scale));
    }
    Ok(acc.estimate())
}

pub fn bias_vector<R: Rng + ?Sized>(
    restorer: &RestorationOperator,
    prior: &Arc<GmmPrior>,
    ens: &DegradationEnsemble,
    x: &DVector<f64>,
    tau: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(bias_estimate(restorer, prior, ens, x, tau, mc_samples, rng)?.mean)
}

pub fn measure_bias<R: Rng + ?Sized>(
    restorer: &RestorationOperator,
    prior: &Arc<GmmPrior>,
    ens: &DegradationEnsemble,
    probes: &[DVector<f64>],
    tau: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<BiasReport> {
    if probes.is_empty() {
        return Err(Error::invalid("measure_bias needs at least one probe point"));
    }
    let mut per_point = Vec::with_capacity(probes.len());
    for x in probes {
        let b = bias_vector(restorer, prior, ens, x, tau, mc_samples, rng)?;
        per_point.push((x.clone(), b.norm()));
    }
    let epsilon_hat = per_point.iter().map(|p| p.1).fold(0.0, f64::max);
    let radius = probes.iter().map(|p| p.norm()).fold(0.0, f64::max);
    Ok(BiasReport {
        epsilon_hat,
        per_point,
        samples_per_point: mc_samples,
        note: format!(
            "empirical bound over {} probe points with norm <= {radius:.6}",
            probes.len()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gauss_hermite;
    use crate::rng;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn setup_1d() -> (Arc<GmmPrior>, RestorationOperator, LinearOperator) {
        let prior = Arc::new(GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap());
        let r = RestorationOperator::exact(Arc::clone(&prior), 1.0).unwrap();
        (prior, r, LinearOperator::identity(1))
    }

    #[test]
    fn restore_examples() {
        let (_, exact, id) = setup_1d();
        assert!((exact.restore(&scalar(2.0), &id).unwrap()[0] - 1.0).abs() < 1e-14);
        let off = exact
            .clone()
            .biased(Perturbation::ConstantOffset(scalar(0.1)))
            .unwrap();
        assert!((off.restore(&scalar(2.0), &id).unwrap()[0] - 1.1).abs() < 1e-14);
        let unit = exact.clone().biased(Perturbation::Gain(1.0)).unwrap();
        assert_eq!(
            unit.restore(&scalar(2.0), &id).unwrap(),
            exact.restore(&scalar(2.0), &id).unwrap()
        );
    }

    #[test]
    fn exact_restorer_has_zero_bias() {
        let (prior, exact, id) = setup_1d();
        let ens = DegradationEnsemble::uniform(vec![id], 1.0).unwrap();
        let mut r = rng::seeded(1);
        let report =
            measure_bias(&exact, &prior, &ens, &[scalar(0.5), scalar(-2.0)], 1.0, 200, &mut r)
                .unwrap();
        assert_eq!(report.epsilon_hat, 0.0);
    }

    #[test]
    fn offset_bias_is_minus_c_per_sample() {
        let prior = Arc::new(GmmPrior::isotropic(DVector::zeros(3), 1.0).unwrap());
        let c = DVector::from_column_slice(&[0.1, -0.2, 0.3]);
        let biased = RestorationOperator::exact(Arc::clone(&prior), 1.0)
            .unwrap()
            .biased(Perturbation::ConstantOffset(c.clone()))
            .unwrap();
        let mut r = rng::seeded(2);

        let ens = DegradationEnsemble::uniform(vec![LinearOperator::identity(3)], 1.0).unwrap();
        let x = DVector::from_column_slice(&[1.0, 2.0, -1.0]);
        let b = bias_vector(&biased, &prior, &ens, &x, 1.0, 50, &mut r).unwrap();
        assert!((b + &c).amax() < 1e-12);

        let mask = LinearOperator::mask_indices(3, &[0, 2]).unwrap();
        let ens = DegradationEnsemble::uniform(vec![mask], 1.0).unwrap();
        let b = bias_vector(&biased, &prior, &ens, &x, 1.0, 50, &mut r).unwrap();
        let expected = DVector::from_column_slice(&[-0.1, 0.0, -0.3]);
        assert!((b - expected).amax() < 1e-12);

        let report = measure_bias(&biased, &prior, &ens, &[x.clone()], 1.0, 10, &mut r).unwrap();
        assert!((report.epsilon_hat - (0.01f64 + 0.09).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gain_bias_matches_quadrature() {
        // (τ/σ²) E_s[R*(s) − R(s)] with s ~ N(x, 1): quadrature oracle
        let (prior, exact, id) = setup_1d();
        let gain = exact.clone().biased(Perturbation::Gain(0.5)).unwrap();
        let x = 1.6;
        let (nodes, weights) = gauss_hermite(40).unwrap();
        let quad: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(t, w)| {
                let s = scalar(x + 2f64.sqrt() * t);
                let gap = exact.restore(&s, &id).unwrap()[0] - gain.restore(&s, &id).unwrap()[0];
                w * gap
            })
            .sum::<f64>()
            / std::f64::consts::PI.sqrt();
        assert!((quad - 0.25 * x).abs() < 1e-12);

        let ens = DegradationEnsemble::uniform(vec![id], 1.0).unwrap();
        let mut r = rng::seeded(3);
        let est = bias_estimate(&gain, &prior, &ens, &scalar(x), 1.0, 20_000, &mut r).unwrap();
        assert!((est.mean[0] - quad).abs() <= 4.0 * est.std_error[0]);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let prior = Arc::new(GmmPrior::isotropic(DVector::from_element(4, 2.0), 1.0).unwrap());
        let smooth = RestorationOperator::exact(Arc::clone(&prior), 0.5)
            .unwrap()
            .biased(Perturbation::Smoothing(0.7))
            .unwrap();
        let id = LinearOperator::identity(4);
        let out = smooth.restore(&DVector::from_element(4, 2.0), &id).unwrap();
        assert!((out - DVector::from_element(4, 2.0)).amax() < 1e-14);
    }
}
