//! Image quality metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const DEFAULT_PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Set when the MSE was zero and `db` is the cap.
    pub capped: bool,
}

pub fn psnr(x_hat: &DVector<f64>, x_true: &DVector<f64>, peak: f64) -> Result<Psnr> {
    psnr_with_cap(x_hat, x_true, peak, DEFAULT_PSNR_CAP)
}

pub fn psnr_with_cap(x_hat: &DVector<f64>, x_true: &DVector<f64>, peak: f64, cap: f64) -> Result<Psnr> {
    check_len("psnr inputs", x_true.len(), x_hat.len())?;
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr peak must be positive"));
    }
    let mse = mse(x_hat, x_true);
    if mse == 0.0 {
        return Ok(Psnr { db: cap, capped: true });
    }
    Ok(Psnr {
        db: 10.0 * (peak * peak / mse).log10(),
        capped: false,
    })
}

pub fn mse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).norm_squared() / a.len() as f64
}

/// Elementwise absolute value: the magnitude image of a real reconstruction.
pub fn magnitude(x: &DVector<f64>) -> DVector<f64> {
    x.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub peak: f64,
    pub k1: f64,
    pub k2: f64,
}

impl SsimParams {
    pub fn new(peak: f64) -> Self {
        Self {
            window: 7,
            peak,
            k1: 0.01,
            k2: 0.03,
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }
}

/// Mean SSIM over all fully contained `window × window` blocks (uniform weights).
/// The window shrinks to the image size on small axes.
pub fn ssim(
    x_hat: &DVector<f64>,
    x_true: &DVector<f64>,
    height: usize,
    width: usize,
    params: &SsimParams,
) -> Result<f64> {
    check_len("ssim image", height * width, x_true.len())?;
    check_len("ssim image", height * width, x_hat.len())?;
    if params.window == 0 || !(params.peak > 0.0) {
        return Err(Error::invalid("ssim needs window >= 1 and peak > 0"));
    }
    let wh = params.window.min(height);
    let ww = params.window.min(width);
    let count = (wh * ww) as f64;
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=(height - wh) {
        for c0 in 0..=(width - ww) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for r in r0..r0 + wh {
                for c in c0..c0 + ww {
                    ma += x_hat[r * width + c];
                    mb += x_true[r * width + c];
                }
            }
            ma /= count;
            mb /= count;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + wh {
                for c in c0..c0 + ww {
                    let da = x_hat[r * width + c] - ma;
                    let db = x_true[r * width + c] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= count;
            vb /= count;
            cov /= count;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
