//! k-space row masks for single-channel compressed sensing.
//!
//! Rows are described in centered coordinates (`height / 2` is DC) and mapped
//! to FFT order when the operator is built. Every mask contains a block of
//! fully sampled center rows (ACS lines).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    /// Every `acceleration`-th row starting at `offset`.
    Uniform { offset: usize },
    /// Rows drawn without replacement from a seeded stream.
    Random { seed: u64 },
}

/// Centered row indices of the ACS block.
pub fn acs_rows(height: usize, center_lines: usize) -> Vec<usize> {
    let lines = center_lines.min(height);
    let start = height / 2 - lines / 2;
    (start..start + lines).collect()
}

/// Centered row indices kept by a mask of the given pattern.
pub fn kspace_rows(
    height: usize,
    acceleration: usize,
    center_lines: usize,
    pattern: MaskPattern,
) -> Result<Vec<usize>> {
    if acceleration == 0 {
        return Err(Error::invalid("acceleration must be positive"));
    }
    if height == 0 {
        return Err(Error::invalid("mask height must be positive"));
    }
    let mut keep = vec![false; height];
    for r in acs_rows(height, center_lines) {
        keep[r] = true;
    }
    match pattern {
        MaskPattern::Uniform { offset } => {
            for r in (offset % acceleration..height).step_by(acceleration) {
                keep[r] = true;
            }
        }
        MaskPattern::Random { seed } => {
            let target = height.div_ceil(acceleration);
            let mut free: Vec<usize> = (0..height).filter(|&r| !keep[r]).collect();
            let have = height - free.len();
            let extra = target.saturating_sub(have).min(free.len());
            let mut stream = rng::seeded(seed);
            free.shuffle(&mut stream);
            for &r in &free[..extra] {
                keep[r] = true;
            }
        }
    }
    Ok((0..height).filter(|&r| keep[r]).collect())
}

/// Maps a centered row index to its FFT-order row.
pub fn centered_to_fft_row(height: usize, centered: usize) -> usize {
    (centered + height - height / 2) % height
}

/// Mask over interleaved k-space keeping whole rows (all `kx` for each kept `ky`).
pub fn kspace_row_mask(height: usize, width: usize, centered_rows: &[usize]) -> Result<LinearOperator> {
    let mut keep = vec![false; 2 * height * width];
    for &c in centered_rows {
        if c >= height {
            return Err(Error::invalid(format!("mask row {c} outside height {height}")));
        }
        let r = centered_to_fft_row(height, c);
        for col in 0..width {
            let idx = 2 * (r * width + col);
            keep[idx] = true;
            keep[idx + 1] = true;
        }
    }
    Ok(LinearOperator::mask(keep))
}

/// Real image → masked unitary k-space: `P · F`.
pub fn cs_operator(height: usize, width: usize, centered_rows: &[usize]) -> Result<LinearOperator> {
    let fourier = LinearOperator::fourier(height, width, true);
    let mask = kspace_row_mask(height, width, centered_rows)?;
    LinearOperator::compose(vec![fourier, mask])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mask_has_acs_and_stride() {
        let rows = kspace_rows(32, 8, 4, MaskPattern::Uniform { offset: 3 }).unwrap();
        for r in 14..18 {
            assert!(rows.contains(&r));
        }
        for r in [3, 11, 19, 27] {
            assert!(rows.contains(&r));
        }
        assert_eq!(rows.len(), 8);
    }

    #[test]
    fn eight_offsets_cover_every_row() {
        let mut covered = [false; 32];
        for offset in 0..8 {
            for r in kspace_rows(32, 8, 4, MaskPattern::Uniform { offset }).unwrap() {
                covered[r] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn random_mask_hits_target_count_and_is_seeded() {
        let a = kspace_rows(32, 4, 4, MaskPattern::Random { seed: 9 }).unwrap();
        let b = kspace_rows(32, 4, 4, MaskPattern::Random { seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn dc_row_maps_to_zero() {
        assert_eq!(centered_to_fft_row(32, 16), 0);
        assert_eq!(centered_to_fft_row(32, 15), 31);
        assert_eq!(centered_to_fft_row(5, 2), 0);
    }
}
