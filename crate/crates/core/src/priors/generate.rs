use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Covariance, GaussianComponent, GmmPrior};
use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};

/// Seeded random Gaussian mixture, reproducible from the recipe alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmRecipe {
    pub dim: usize,
    pub components: usize,
    pub cov_scale: f64,
    pub seed: u64,
    /// Diagonal covariances instead of full ones (generic recipes only).
    #[serde(default)]
    pub diagonal: bool,
    /// Image-structured means and a stationary smooth covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRecipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecipe {
    pub height: usize,
    pub width: usize,
    /// Correlation length of the squared-exponential covariance, in pixels.
    pub length_scale: f64,
    /// White-noise floor added to the covariance, relative to `cov_scale²`.
    pub nugget: f64,
    /// Number of Gaussian blobs composing each component mean.
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// Range of blob radii in pixels for a 32-pixel image; scaled with size.
    #[serde(default = "default_blob_radius")]
    pub blob_radius: (f64, f64),
}

fn default_blobs() -> usize {
    4
}

fn default_blob_radius() -> (f64, f64) {
    (2.0, 6.0)
}

impl GmmRecipe {
    pub fn build(&self) -> Result<GmmPrior> {
        if self.dim == 0 || self.components == 0 {
            return Err(Error::invalid("recipe needs positive dim and components"));
        }
        if !(self.cov_scale.is_finite() && self.cov_scale > 0.0) {
            return Err(Error::invalid("cov_scale must be positive"));
        }
        let mut rng = rng::seeded(self.seed);
        let raw: Vec<f64> = (0..self.components)
            .map(|_| rng.random_range(0.5..1.5))
            .collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // exact unit sum
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;

        match &self.image {
            Some(img) => self.build_image(img, &weights, &mut rng),
            None => self.build_generic(&weights, &mut rng),
        }
    }

    fn build_generic<R: Rng>(&self, weights: &[f64], rng: &mut R) -> Result<GmmPrior> {
        let n = self.dim;
        let comps = weights
            .iter()
            .map(|&w| {
                let mean = standard_normal(rng, n);
                let cov = if self.diagonal {
                    Covariance::Diagonal(DVector::from_fn(n, |_, _| {
                        self.cov_scale * rng.random_range(0.5..1.5)
                    }))
                } else {
                    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                    let mut c = (&b * b.transpose()) * (self.cov_scale / n as f64);
                    for i in 0..n {
                        c[(i, i)] += 0.1 * self.cov_scale;
                    }
                    Covariance::Full((&c + c.transpose()) * 0.5)
                };
                GaussianComponent::new(w, mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;
        GmmPrior::new(comps)
    }

    fn build_image<R: Rng>(
        &self,
        img: &ImageRecipe,
        weights: &[f64],
        rng: &mut R,
    ) -> Result<GmmPrior> {
        let (h, w) = (img.height, img.width);
        if !(img.blob_radius.0 > 0.0 && img.blob_radius.0 < img.blob_radius.1) {
            return Err(Error::invalid("blob_radius must satisfy 0 < min < max"));
        }
        if h * w != self.dim {
            return Err(Error::invalid(format!(
                "image recipe {h}×{w} does not match dim {}",
                self.dim
            )));
        }
        let var = self.cov_scale * self.cov_scale;
        let ell2 = img.length_scale * img.length_scale;
        let cov = DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let (ri, ci) = ((i / w) as f64, (i % w) as f64);
            let (rj, cj) = ((j / w) as f64, (j % w) as f64);
            let d2 = (ri - rj).powi(2) + (ci - cj).powi(2);
            var * ((-0.5 * d2 / ell2).exp() + if i == j { img.nugget } else { 0.0 })
        });
        let comps = weights
            .iter()
            .map(|&wt| {
                let mut mean = DVector::zeros(self.dim);
                for _ in 0..img.blobs {
                    let amp = rng.random_range(0.3..1.0);
                    let (r0, r1) = img.blob_radius;
                    let radius: f64 = rng.random_range(r0..r1) * (h.min(w) as f64 / 32.0);
                    let (cr, cc) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
                    for r in 0..h {
                        for c in 0..w {
                            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                            mean[r * w + c] += amp * (-0.5 * d2 / (radius * radius)).exp();
                        }
                    }
                }
                GaussianComponent::new(wt, mean, Covariance::Full(cov.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        GmmPrior::new(comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_is_reproducible() {
        let r = GmmRecipe {
            dim: 3,
            components: 2,
            cov_scale: 1.0,
            seed: 11,
            diagonal: false,
            image: None,
        };
        let a = r.build().unwrap();
        let b = r.build().unwrap();
        assert_eq!(a.components()[1].mean, b.components()[1].mean);
        let total: f64 = a.components().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn image_recipe_checks_shape() {
        let r = GmmRecipe {
            dim: 10,
            components: 1,
            cov_scale: 0.1,
            seed: 1,
            diagonal: false,
            image: Some(ImageRecipe {
                height: 4,
                width: 4,
                length_scale: 1.0,
                nugget: 0.01,
                blobs: 2,
                blob_radius: (2.0, 6.0),
            }),
        };
        assert!(r.build().is_err());
    }
}
