use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Covariance, GmmPrior};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::operators::LinearOperator;

/// Degradation `H` with isotropic AWGN of standard deviation `sigma`.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub h: LinearOperator,
    pub sigma: f64,
}

impl ObservationModel {
    pub fn new(h: LinearOperator, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { h, sigma })
    }
}

/// Result of one exact posterior evaluation.
#[derive(Debug, Clone)]
pub struct PosteriorEval {
    /// `log p(s | H)`.
    pub log_density: f64,
    /// Posterior component responsibilities; they sum to one.
    pub responsibilities: Vec<f64>,
    /// `E[x | s, H]`.
    pub mean: DVector<f64>,
}

#[derive(Debug)]
struct DiagComponent {
    h_mean: DVector<f64>,
    innov_var: DVector<f64>,
    gain: DVector<f64>,
    log_det: f64,
}

#[derive(Debug)]
struct DenseComponent {
    h_mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Σ H_aᵀ` restricted to the active rows.
    cov_ht: DMatrix<f64>,
    log_det: f64,
}

#[derive(Debug)]
enum Form {
    /// Diagonal `H` and diagonal covariances: everything is elementwise.
    Diagonal {
        comps: Vec<DiagComponent>,
    },
    /// General path on the rows of `H` that are not identically zero.
    Dense {
        active: Vec<usize>,
        inactive: Vec<usize>,
        comps: Vec<DenseComponent>,
    },
}

/// Precomputed per-component innovation factorizations for one `(prior, H, σ)`.
#[derive(Debug)]
pub struct ObservationFactors {
    sigma: f64,
    in_dim: usize,
    out_dim: usize,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    form: Form,
}

impl ObservationFactors {
    pub fn new(prior: &GmmPrior, h: &LinearOperator, sigma: f64) -> Result<Self> {
        check_len("observation operator in_dim", prior.dim(), h.in_dim())?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let var = sigma * sigma;
        let comps = prior.components();
        let all_diag = comps
            .iter()
            .all(|c| matches!(c.cov, Covariance::Diagonal(_)));
        let diag_h = if all_diag { h.as_diagonal() } else { None };

        let form = if let Some(hd) = diag_h {
            let hd = DVector::from_vec(hd);
            let comps = comps
                .iter()
                .map(|c| {
                    let Covariance::Diagonal(d) = &c.cov else {
                        unreachable!()
                    };
                    let innov_var = hd.zip_map(d, |h, d| h * h * d + var);
                    let gain = DVector::from_fn(d.len(), |i, _| d[i] * hd[i] / innov_var[i]);
                    DiagComponent {
                        h_mean: hd.component_mul(&c.mean),
                        log_det: innov_var.iter().map(|v| v.ln()).sum(),
                        innov_var,
                        gain,
                    }
                })
                .collect();
            Form::Diagonal { comps }
        } else {
            let dense = h.to_dense()?;
            let (active, inactive): (Vec<usize>, Vec<usize>) =
                (0..dense.nrows()).partition(|&i| dense.row(i).iter().any(|&x| x != 0.0));
            let h_a = dense.select_rows(&active);
            let mut out = Vec::with_capacity(comps.len());
            for c in comps {
                let cov_ht = match &c.cov {
                    Covariance::Diagonal(d) => {
                        let mut m = h_a.transpose();
                        for (mut row, dv) in m.row_iter_mut().zip(d.iter()) {
                            row *= *dv;
                        }
                        m
                    }
                    Covariance::Full(s) => s * h_a.transpose(),
                };
                let mut innov = &h_a * &cov_ht;
                innov = (&innov + innov.transpose()) * 0.5;
                for i in 0..innov.nrows() {
                    innov[(i, i)] += var;
                }
                let (chol, _) = linalg::cholesky_innovation(&innov)?;
                out.push(DenseComponent {
                    h_mean: &h_a * &c.mean,
                    log_det: linalg::log_det_from_cholesky(&chol),
                    chol,
                    cov_ht,
                });
            }
            Form::Dense {
                active,
                inactive,
                comps: out,
            }
        };

        Ok(Self {
            sigma,
            in_dim: h.in_dim(),
            out_dim: h.out_dim(),
            log_weights: comps.iter().map(|c| c.weight.ln()).collect(),
            means: comps.iter().map(|c| c.mean.clone()).collect(),
            form,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    /// Exact log-density, responsibilities and posterior mean at `s`.
    pub fn evaluate(&self, s: &DVector<f64>) -> Result<PosteriorEval> {
        check_len("observation vector", self.out_dim, s.len())?;
        let var = self.sigma * self.sigma;
        let k = self.means.len();
        let mut log_terms = vec![f64::NEG_INFINITY; k];
        let mut updates: Vec<Option<DVector<f64>>> = vec![None; k];
        let mut common = 0.0;

        match &self.form {
            Form::Diagonal { comps } => {
                for (i, c) in comps.iter().enumerate() {
                    if self.log_weights[i] == f64::NEG_INFINITY {
                        continue;
                    }
                    let r = s - &c.h_mean;
                    let quad: f64 = r
                        .iter()
                        .zip(c.innov_var.iter())
                        .map(|(r, v)| r * r / v)
                        .sum();
                    log_terms[i] = self.log_weights[i]
                        - 0.5 * (self.out_dim as f64 * (2.0 * PI).ln() + c.log_det + quad);
                    updates[i] = Some(&self.means[i] + c.gain.component_mul(&r));
                }
            }
            Form::Dense {
                active,
                inactive,
                comps,
            } => {
                let s_a = s.select_rows(active);
                common = -0.5
                    * inactive
                        .iter()
                        .map(|&j| (2.0 * PI * var).ln() + s[j] * s[j] / var)
                        .sum::<f64>();
                for (i, c) in comps.iter().enumerate() {
                    if self.log_weights[i] == f64::NEG_INFINITY {
                        continue;
                    }
                    let r = &s_a - &c.h_mean;
                    let solved = c.chol.solve(&r);
                    log_terms[i] = self.log_weights[i]
                        - 0.5 * (active.len() as f64 * (2.0 * PI).ln() + c.log_det + r.dot(&solved));
                    updates[i] = Some(&self.means[i] + &c.cov_ht * solved);
                }
            }
        }

        let log_density = linalg::log_sum_exp(&log_terms) + common;
        let responsibilities = linalg::softmax(&log_terms);
        let mut mean = DVector::zeros(self.in_dim);
        for (w, u) in responsibilities.iter().zip(&updates) {
            if let Some(u) = u {
                if *w > 0.0 {
                    mean += u * *w;
                }
            }
        }
        Ok(PosteriorEval {
            log_density,
            responsibilities,
            mean,
        })
    }

    /// `(HΣ_kHᵀ + σ²I)⁻¹ u` over the full output space.
    pub fn precision_apply(&self, k: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("precision input", self.out_dim, u.len())?;
        let var = self.sigma * self.sigma;
        Ok(match &self.form {
            Form::Diagonal { comps } => u.component_div(&comps[k].innov_var),
            Form::Dense {
                active,
                inactive,
                comps,
            } => {
                let mut out = DVector::zeros(self.out_dim);
                let solved = comps[k].chol.solve(&u.select_rows(active));
                for (pos, &j) in active.iter().enumerate() {
                    out[j] = solved[pos];
                }
                for &j in inactive {
                    out[j] = u[j] / var;
                }
                out
            }
        })
    }

    /// `log det(HΣ_kHᵀ + σ²I)` over the full output space.
    pub fn log_det(&self, k: usize) -> f64 {
        match &self.form {
            Form::Diagonal { comps } => comps[k].log_det,
            Form::Dense {
                inactive, comps, ..
            } => comps[k].log_det + inactive.len() as f64 * (self.sigma * self.sigma).ln(),
        }
    }

    /// `tr (HΣ_kHᵀ + σ²I)⁻¹`.
    pub fn trace_precision(&self, k: usize) -> f64 {
        let var = self.sigma * self.sigma;
        match &self.form {
            Form::Diagonal { comps } => comps[k].innov_var.iter().map(|v| 1.0 / v).sum(),
            Form::Dense {
                inactive, comps, ..
            } => comps[k].chol.inverse().trace() + inactive.len() as f64 / var,
        }
    }
}

/// Factorizations for one prior, memoized by operator fingerprint and `σ`.
#[derive(Debug)]
pub struct FactorCache {
    prior: Arc<GmmPrior>,
    map: Mutex<HashMap<(u64, u64), Arc<ObservationFactors>>>,
}

impl FactorCache {
    pub fn new(prior: Arc<GmmPrior>) -> Self {
        Self {
            prior,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn prior(&self) -> &Arc<GmmPrior> {
        &self.prior
    }

    pub fn get(&self, h: &LinearOperator, sigma: f64) -> Result<Arc<ObservationFactors>> {
        let key = (h.fingerprint(), sigma.to_bits());
        if let Some(f) = self.map.lock().expect("factor cache poisoned").get(&key) {
            return Ok(Arc::clone(f));
        }
        // built outside the lock; a concurrent duplicate build is harmless
        let built = Arc::new(ObservationFactors::new(&self.prior, h, sigma)?);
        let mut map = self.map.lock().expect("factor cache poisoned");
        Ok(Arc::clone(map.entry(key).or_insert(built)))
    }
}

/// `log p(s | H)` for a Gaussian-mixture prior.
pub fn observation_logpdf(prior: &GmmPrior, obs: &ObservationModel, s: &DVector<f64>) -> Result<f64> {
    Ok(ObservationFactors::new(prior, &obs.h, obs.sigma)?
        .evaluate(s)?
        .log_density)
}

/// Exact MMSE restoration `E[x | s, H]`.
pub fn mmse_restore(
    prior: &GmmPrior,
    obs: &ObservationModel,
    s: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(ObservationFactors::new(prior, &obs.h, obs.sigma)?
        .evaluate(s)?
        .mean)
}

/// Score of the degraded observation, `∇_s log p(s | H) = (H R*(s, H) − s) / σ²`.
pub fn observation_score(
    prior: &GmmPrior,
    obs: &ObservationModel,
    s: &DVector<f64>,
) -> Result<DVector<f64>> {
    let restored = mmse_restore(prior, obs, s)?;
    let hx = obs.h.apply(&restored)?;
    Ok((hx - s) / (obs.sigma * obs.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::GaussianComponent;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn std_normal_1d() -> GmmPrior {
        GmmPrior::isotropic(DVector::zeros(1), 1.0).unwrap()
    }

    #[test]
    fn one_dimensional_logpdf_examples() {
        let prior = std_normal_1d();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        let base = -0.5 * (2.0 * PI * 2.0).ln();
        assert!((base - (-1.265512)).abs() < 1e-6);
        let at0 = observation_logpdf(&prior, &obs, &scalar(0.0)).unwrap();
        assert!((at0 - base).abs() < 1e-12);
        let at_sqrt2 = observation_logpdf(&prior, &obs, &scalar(2f64.sqrt())).unwrap();
        assert!((at_sqrt2 - (base - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn fully_degrading_operator_ignores_prior() {
        let prior = GmmPrior::isotropic(DVector::from_column_slice(&[3.0, -1.0]), 4.0).unwrap();
        let obs = ObservationModel::new(LinearOperator::scale(0.0, 2), 0.5).unwrap();
        let s = DVector::from_column_slice(&[0.2, -0.7]);
        let expected: f64 = s
            .iter()
            .map(|v| -0.5 * ((2.0 * PI * 0.25).ln() + v * v / 0.25))
            .sum();
        let got = observation_logpdf(&prior, &obs, &s).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn posterior_mean_examples() {
        let prior = std_normal_1d();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        assert!((mmse_restore(&prior, &obs, &scalar(2.0)).unwrap()[0] - 1.0).abs() < 1e-14);

        let mu = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let prior = GmmPrior::gaussian(
            mu.clone(),
            Covariance::Full(DMatrix::from_row_slice(
                3,
                3,
                &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5],
            )),
        )
        .unwrap();
        let h = LinearOperator::dense(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 0.5, 0.0, 0.0, -1.0, 2.0],
        ));
        let obs = ObservationModel::new(h.clone(), 0.3).unwrap();
        let s = h.apply(&mu).unwrap();
        assert!((mmse_restore(&prior, &obs, &s).unwrap() - mu).amax() < 1e-12);
    }

    #[test]
    fn two_point_mixture_gives_tanh() {
        let comp = |m: f64| {
            GaussianComponent::new(
                0.5,
                scalar(m),
                Covariance::Diagonal(scalar(1e-6)),
            )
            .unwrap()
        };
        let prior = GmmPrior::new(vec![comp(1.0), comp(-1.0)]).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        let x = mmse_restore(&prior, &obs, &scalar(0.5)).unwrap()[0];
        assert!((x - 0.5f64.tanh()).abs() < 1e-3);
        assert!((0.5f64.tanh() - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn score_examples() {
        let prior = std_normal_1d();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1.0).unwrap();
        let score = observation_score(&prior, &obs, &scalar(2.0)).unwrap()[0];
        // both sides of the identity: (R*(s) − s)/σ² and −s/(1 + σ²)
        assert!((score + 1.0).abs() < 1e-14);
        assert!((-2.0 / 2.0 - score).abs() < 1e-14);

        let mu = DVector::from_column_slice(&[0.4, -0.3]);
        let prior = GmmPrior::isotropic(mu.clone(), 2.0).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(2), 0.5).unwrap();
        assert!(observation_score(&prior, &obs, &mu).unwrap().amax() < 1e-14);
    }

    #[test]
    fn diagonal_and_dense_paths_agree() {
        let comps = vec![
            GaussianComponent::new(
                0.3,
                DVector::from_column_slice(&[1.0, 0.0, -1.0]),
                Covariance::Diagonal(DVector::from_column_slice(&[0.5, 1.0, 2.0])),
            )
            .unwrap(),
            GaussianComponent::new(
                0.7,
                DVector::from_column_slice(&[-0.5, 2.0, 0.0]),
                Covariance::Diagonal(DVector::from_column_slice(&[1.5, 0.2, 0.7])),
            )
            .unwrap(),
        ];
        let prior = GmmPrior::new(comps).unwrap();
        let mask = LinearOperator::mask_indices(3, &[0, 2]).unwrap();
        let dense = LinearOperator::dense(mask.to_dense().unwrap());
        let s = DVector::from_column_slice(&[0.3, 0.1, -0.8]);
        let a = ObservationFactors::new(&prior, &mask, 0.4)
            .unwrap()
            .evaluate(&s)
            .unwrap();
        let b = ObservationFactors::new(&prior, &dense, 0.4)
            .unwrap()
            .evaluate(&s)
            .unwrap();
        assert!((a.log_density - b.log_density).abs() < 1e-12);
        assert!((a.mean - b.mean).amax() < 1e-12);
        assert!((a.responsibilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_sigma_stays_finite() {
        let comp = |m: f64, w: f64| {
            GaussianComponent::new(w, scalar(m), Covariance::Diagonal(scalar(0.01))).unwrap()
        };
        let prior = GmmPrior::new(vec![comp(-1.0, 0.5), comp(1.0, 0.5)]).unwrap();
        let obs = ObservationModel::new(LinearOperator::identity(1), 1e-3).unwrap();
        let e = ObservationFactors::new(&prior, &obs.h, obs.sigma)
            .unwrap()
            .evaluate(&scalar(5.0))
            .unwrap();
        assert!(e.log_density.is_finite());
        assert!(e.mean[0].is_finite());
        assert!((e.responsibilities[1] - 1.0).abs() < 1e-12);
    }
}
