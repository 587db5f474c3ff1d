//! Small dense linear-algebra and statistics helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter schedule for symmetric factorizations, relative to the mean diagonal.
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;

/// Cholesky factorization with jitter escalation from 1e-12 to `max_jitter`
/// (relative to the mean diagonal). Returns the factor and the jitter used.
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    max_jitter: f64,
    what: &str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let scale = (m.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_START;
    while jitter <= max_jitter * (1.0 + 1e-9) {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter * scale;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter * scale));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "{what}: Cholesky failed with jitter up to {max_jitter:e}"
    )))
}

/// Default escalation for innovation covariances.
pub fn cholesky_innovation(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    cholesky_jittered(m, JITTER_MAX, "innovation covariance")
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalized weights `exp(v_i − logsumexp(v))`.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

/// Largest eigenvalue of a symmetric PSD map given only its action.
///
/// Dense symmetric eigendecomposition is used when `dim <= dense_limit`,
/// power iteration otherwise.
pub fn spectral_norm_sym<F>(dim: usize, dense_limit: usize, mut apply: F) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if dim == 0 {
        return Ok(0.0);
    }
    if dim <= dense_limit {
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            m.set_column(j, &apply(&e)?);
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        return Ok(eig.iter().cloned().fold(0.0, |a: f64, b| a.max(b.abs())));
    }
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w = apply(&v)?;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Running mean and variance of scalar samples (Welford).
#[derive(Debug, Clone, Default)]
pub struct ScalarAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl ScalarAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Running coordinatewise mean and variance of vector samples.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl VectorAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::zeros(self.mean.len())
        } else {
            &self.m2 / (self.count - 1) as f64
        }
    }

    /// Sum of coordinate variances, i.e. `E‖X − EX‖²`.
    pub fn trace_variance(&self) -> f64 {
        self.variance().sum()
    }

    pub fn estimate(&self) -> VectorEstimate {
        let se = if self.count < 2 {
            DVector::zeros(self.mean.len())
        } else {
            self.variance().map(|v| (v / self.count as f64).sqrt())
        };
        VectorEstimate {
            mean: self.mean.clone(),
            std_error: se,
            samples: self.count,
        }
    }
}

/// Monte Carlo estimate of a vector with coordinatewise standard errors.
#[derive(Debug, Clone)]
pub struct VectorEstimate {
    pub mean: DVector<f64>,
    pub std_error: DVector<f64>,
    pub samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extreme_exponents() {
        let v = [-1e4, -1e4 + 2f64.ln()];
        let expected = -1e4 + 3f64.ln();
        assert!((log_sum_exp(&v) - expected).abs() < 1e-9);
        let w = softmax(&v);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_innovation(&m).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-8);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_innovation(&bad),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn spectral_norm_dense_and_power_agree() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let dense = spectral_norm_sym(3, 64, |v| Ok(&m * v)).unwrap();
        let power = spectral_norm_sym(3, 0, |v| Ok(&m * v)).unwrap();
        assert!((dense - power).abs() < 1e-8 * dense);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut acc = ScalarAccumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        let mean = 3.75;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((acc.mean() - mean).abs() < 1e-15);
        assert!((acc.variance() - var).abs() < 1e-12);
    }
}
