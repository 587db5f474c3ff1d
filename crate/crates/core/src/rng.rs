//! Seeded random streams.
//!
//! Every run derives independent ChaCha streams from one 64-bit seed. The
//! stream index fixes the role of the draws so that changing how many numbers
//! one role consumes never perturbs another role.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Degradation-operator selection.
pub const STREAM_SELECTION: u64 = 0;
/// Restoration noise `n` added to `Hx`.
pub const STREAM_NOISE: u64 = 1;
/// Ground-truth sampling and measurement noise.
pub const STREAM_SIMULATION: u64 = 2;
/// Monte Carlo probes (auditor, diagnostics).
pub const STREAM_PROBE: u64 = 3;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn gaussian_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, sigma: f64) -> DVector<f64> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)),
    )
}
