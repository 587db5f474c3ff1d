//! Unitary 2-D discrete Fourier transform on interleaved (re, im) vectors.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct FourierPlan {
    pub height: usize,
    pub width: usize,
    /// Input is a real image of `height·width` samples; otherwise interleaved complex.
    pub real_input: bool,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierPlan")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("real_input", &self.real_input)
            .finish()
    }
}

impl FourierPlan {
    pub fn new(height: usize, width: usize, real_input: bool) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            real_input,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn in_dim(&self) -> usize {
        if self.real_input {
            self.pixels()
        } else {
            2 * self.pixels()
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.pixels()
    }

    fn transform(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let (h, w) = (self.height, self.width);
        if w > 1 {
            for r in 0..h {
                row.process(&mut buf[r * w..(r + 1) * w]);
            }
        }
        if h > 1 {
            let mut column = vec![Complex::new(0.0, 0.0); h];
            for c in 0..w {
                for r in 0..h {
                    column[r] = buf[r * w + c];
                }
                col.process(&mut column);
                for r in 0..h {
                    buf[r * w + c] = column[r];
                }
            }
        }
        let scale = 1.0 / (self.pixels() as f64).sqrt();
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = if self.real_input {
            v.iter().map(|&x| Complex::new(x, 0.0)).collect()
        } else {
            v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect()
        };
        self.transform(&mut buf, false);
        buf.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    /// Adjoint of [`forward`](Self::forward): inverse transform, followed by
    /// taking the real part when the input space is real.
    pub fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> =
            u.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
        self.transform(&mut buf, true);
        if self.real_input {
            buf.iter().map(|z| z.re).collect()
        } else {
            buf.iter().flat_map(|z| [z.re, z.im]).collect()
        }
    }
}
