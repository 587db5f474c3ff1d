use rand::Rng;

use super::LinearOperator;
use crate::error::{check_len, Error, Result};

/// Finite distribution over degradation operators plus the restoration noise level.
#[derive(Debug, Clone)]
pub struct DegradationEnsemble {
    members: Vec<LinearOperator>,
    weights: Vec<f64>,
    sigma: f64,
}

impl DegradationEnsemble {
    pub fn uniform(members: Vec<LinearOperator>, sigma: f64) -> Result<Self> {
        let b = members.len();
        Self::weighted(members, vec![1.0 / b.max(1) as f64; b], sigma)
    }

    pub fn weighted(members: Vec<LinearOperator>, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("degradation ensemble must be non-empty"));
        }
        check_len("ensemble weights", members.len(), weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("ensemble weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("ensemble weights sum to {total}, not 1")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let n = members[0].in_dim();
        for m in &members {
            check_len("ensemble member in_dim", n, m.in_dim())?;
        }
        Ok(Self {
            members,
            weights,
            sigma,
        })
    }

    pub fn members(&self) -> &[LinearOperator] {
        &self.members
    }

    pub fn member(&self, index: usize) -> &LinearOperator {
        &self.members[index]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of members `b`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.members[0].in_dim()
    }

    /// Draws a member index by weight. Zero-weight members are never selected.
    pub fn sample_degradation<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, &LinearOperator) {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                cum += w;
                last_positive = i;
                if u < cum {
                    return (i, &self.members[i]);
                }
            }
        }
        (last_positive, &self.members[last_positive])
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::weighted(self.members.clone(), self.weights.clone(), sigma)
    }
}
