//! Binary prior files: little-endian 64-bit floats.
//!
//! Layout: an 8-value header `[magic, version, n, K, cov_kind, 0, 0, 0]`
//! (`cov_kind` 0 = diagonal, 1 = full) followed, for each component, by its
//! weight, its mean (`n` values) and its covariance (`n` diagonal values or
//! `n²` values in row-major order).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Covariance, GaussianComponent, GmmPrior};
use crate::error::{Error, Result};

pub const PRIOR_MAGIC: f64 = 1_397_244_230.0;
pub const PRIOR_VERSION: f64 = 1.0;

pub fn encode(prior: &GmmPrior) -> Vec<u8> {
    let n = prior.dim();
    let full = prior
        .components()
        .iter()
        .any(|c| matches!(c.cov, Covariance::Full(_)));
    let mut values = vec![
        PRIOR_MAGIC,
        PRIOR_VERSION,
        n as f64,
        prior.components().len() as f64,
        if full { 1.0 } else { 0.0 },
        0.0,
        0.0,
        0.0,
    ];
    for c in prior.components() {
        values.push(c.weight);
        values.extend(c.mean.iter());
        if full {
            let m = c.cov.to_dense();
            for i in 0..n {
                values.extend(m.row(i).iter());
            }
        } else if let Covariance::Diagonal(d) = &c.cov {
            values.extend(d.iter());
        }
    }
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode(bytes: &[u8]) -> Result<GmmPrior> {
    if bytes.len() % 8 != 0 || bytes.len() < 64 {
        return Err(Error::Config("prior file is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values[0] != PRIOR_MAGIC {
        return Err(Error::Config("prior file has the wrong magic number".into()));
    }
    if values[1] != PRIOR_VERSION {
        return Err(Error::Config(format!("unsupported prior file version {}", values[1])));
    }
    let n = values[2] as usize;
    let k = values[3] as usize;
    let full = values[4] == 1.0;
    let per = 1 + n + if full { n * n } else { n };
    if values.len() != 8 + k * per {
        return Err(Error::Config(format!(
            "prior file holds {} values, header implies {}",
            values.len(),
            8 + k * per
        )));
    }
    let mut comps = Vec::with_capacity(k);
    for chunk in values[8..].chunks_exact(per) {
        let mean = DVector::from_column_slice(&chunk[1..1 + n]);
        let cov = if full {
            Covariance::Full(DMatrix::from_row_slice(n, n, &chunk[1 + n..]))
        } else {
            Covariance::Diagonal(DVector::from_column_slice(&chunk[1 + n..]))
        };
        comps.push(GaussianComponent::new(chunk[0], mean, cov)?);
    }
    GmmPrior::new(comps)
}

pub fn write(path: &Path, prior: &GmmPrior) -> Result<()> {
    std::fs::write(path, encode(prior))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<GmmPrior> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::GmmRecipe;

    #[test]
    fn round_trip_full_prior() {
        let prior = GmmRecipe {
            dim: 3,
            components: 2,
            cov_scale: 0.5,
            seed: 4,
            diagonal: false,
            image: None,
        }
        .build()
        .unwrap();
        let back = decode(&encode(&prior)).unwrap();
        for (a, b) in prior.components().iter().zip(back.components()) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov.to_dense(), b.cov.to_dense());
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let prior = GmmPrior::isotropic(DVector::zeros(2), 1.0).unwrap();
        let bytes = encode(&prior);
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
    }
}
