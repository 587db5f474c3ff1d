//! Linear operators with exact adjoints.
//!
//! Every measurement and degradation map is a [`LinearOperator`]: a closed
//! algebra of dense matrices, coordinate masks, unitary Fourier transforms,
//! circular convolutions, fold downsampling, scalings, compositions and
//! convex combinations `(1 − α) I + α·inner`. Operators are immutable and
//! `Send + Sync`.
//!
//! Conventions: masks are square with zeroed entries; the Fourier transform
//! is unitary and writes complex values as interleaved `(re, im)` pairs;
//! convolution is periodic with the kernel origin at its center;
//! downsampling keeps every `factor`-th sample starting at index 0.

mod ensemble;
mod fourier;
pub mod masks;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

pub use ensemble::DegradationEnsemble;
pub use fourier::FourierPlan;

use crate::error::{check_len, Error, Result};

/// Default cap on `in_dim · out_dim` for [`LinearOperator::to_dense`].
pub const DENSE_CAP: usize = 1 << 22;

#[derive(Debug, Clone)]
pub enum OperatorKind {
    Dense(DMatrix<f64>),
    Mask(Vec<bool>),
    Fourier(FourierPlan),
    Convolution {
        kernel: Vec<f64>,
        kernel_height: usize,
        kernel_width: usize,
        height: usize,
        width: usize,
    },
    Downsample {
        factor: usize,
        height: usize,
        width: usize,
    },
    Identity,
    Scale(f64),
    /// Stages applied in list order.
    Composition(Vec<LinearOperator>),
    ConvexCombo {
        alpha: f64,
        inner: Box<LinearOperator>,
    },
    Adjoint(Box<LinearOperator>),
}

#[derive(Debug, Clone)]
pub struct LinearOperator {
    kind: OperatorKind,
    in_dim: usize,
    out_dim: usize,
    fingerprint: u64,
}

impl LinearOperator {
    fn build(kind: OperatorKind, in_dim: usize, out_dim: usize) -> Self {
        let mut hasher = DefaultHasher::new();
        hash_kind(&kind, &mut hasher);
        in_dim.hash(&mut hasher);
        out_dim.hash(&mut hasher);
        Self {
            kind,
            in_dim,
            out_dim,
            fingerprint: hasher.finish(),
        }
    }

    pub fn dense(matrix: DMatrix<f64>) -> Self {
        let (rows, cols) = matrix.shape();
        Self::build(OperatorKind::Dense(matrix), cols, rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self::build(OperatorKind::Identity, dim, dim)
    }

    pub fn scale(c: f64, dim: usize) -> Self {
        Self::build(OperatorKind::Scale(c), dim, dim)
    }

    /// Square mask keeping the `true` entries and zeroing the rest.
    pub fn mask(keep: Vec<bool>) -> Self {
        let n = keep.len();
        Self::build(OperatorKind::Mask(keep), n, n)
    }

    pub fn mask_indices(dim: usize, kept: &[usize]) -> Result<Self> {
        let mut keep = vec![false; dim];
        for &i in kept {
            if i >= dim {
                return Err(Error::invalid(format!("mask index {i} outside dimension {dim}")));
            }
            keep[i] = true;
        }
        Ok(Self::mask(keep))
    }

    pub fn fourier(height: usize, width: usize, real_input: bool) -> Self {
        let plan = FourierPlan::new(height, width, real_input);
        let (i, o) = (plan.in_dim(), plan.out_dim());
        Self::build(OperatorKind::Fourier(plan), i, o)
    }

    /// 1-D circular convolution over a signal of length `dim`.
    pub fn convolution_1d(kernel: Vec<f64>, dim: usize) -> Result<Self> {
        let kw = kernel.len();
        Self::convolution_2d(kernel, 1, kw, 1, dim)
    }

    /// Periodic 2-D convolution of a row-major `height × width` image with a
    /// row-major `kernel_height × kernel_width` kernel centered at
    /// `(kernel_height / 2, kernel_width / 2)`.
    pub fn convolution_2d(
        kernel: Vec<f64>,
        kernel_height: usize,
        kernel_width: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if kernel.is_empty() || kernel.len() != kernel_height * kernel_width {
            return Err(Error::invalid(format!(
                "kernel of {} entries does not match shape {kernel_height}×{kernel_width}",
                kernel.len()
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("convolution image shape must be positive"));
        }
        let n = height * width;
        Ok(Self::build(
            OperatorKind::Convolution {
                kernel,
                kernel_height,
                kernel_width,
                height,
                width,
            },
            n,
            n,
        ))
    }

    /// Keeps every `factor`-th sample from index 0 along each axis longer than one.
    pub fn downsample(factor: usize, height: usize, width: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be positive"));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("downsample image shape must be positive"));
        }
        let (oh, ow) = downsampled_shape(factor, height, width);
        Ok(Self::build(
            OperatorKind::Downsample {
                factor,
                height,
                width,
            },
            height * width,
            oh * ow,
        ))
    }

    pub fn compose(stages: Vec<LinearOperator>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::invalid("composition needs at least one stage"))?;
        for pair in stages.windows(2) {
            check_len("composition chain", pair[0].out_dim, pair[1].in_dim)?;
        }
        let (i, o) = (first.in_dim, stages.last().unwrap().out_dim);
        Ok(Self::build(OperatorKind::Composition(stages), i, o))
    }

    /// `(1 − α) I + α · inner` for a square `inner` and `α ∈ [0, 1]`.
    pub fn convex_combo(alpha: f64, inner: LinearOperator) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        check_len("convex combination (square inner)", inner.in_dim, inner.out_dim)?;
        let n = inner.in_dim;
        Ok(Self::build(
            OperatorKind::ConvexCombo {
                alpha,
                inner: Box::new(inner),
            },
            n,
            n,
        ))
    }

    pub fn adjoint(&self) -> Self {
        match &self.kind {
            OperatorKind::Adjoint(inner) => (**inner).clone(),
            _ => Self::build(
                OperatorKind::Adjoint(Box::new(self.clone())),
                self.out_dim,
                self.in_dim,
            ),
        }
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Structural hash of the operator; equal operators share a fingerprint.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator apply input", self.in_dim, v.len())?;
        Ok(DVector::from_vec(self.forward(v.as_slice())))
    }

    pub fn adjoint_apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator adjoint input", self.out_dim, u.len())?;
        Ok(DVector::from_vec(self.backward(u.as_slice())))
    }

    /// `Hᵀ H v`, bit-identical to `adjoint_apply(apply(v))`.
    pub fn gram_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator gram input", self.in_dim, v.len())?;
        let out = match &self.kind {
            // masking twice copies the same entries
            OperatorKind::Mask(_) | OperatorKind::Identity => self.forward(v.as_slice()),
            _ => self.backward(&self.forward(v.as_slice())),
        };
        Ok(DVector::from_vec(out))
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.to_dense_capped(DENSE_CAP)
    }

    /// Column `j` is `apply(e_j)`. Refuses when `in_dim · out_dim > cap`.
    pub fn to_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let entries = self.in_dim.saturating_mul(self.out_dim);
        if entries > cap {
            return Err(Error::Refused(format!(
                "dense form has {entries} entries, above the cap of {cap}"
            )));
        }
        if let OperatorKind::Dense(m) = &self.kind {
            return Ok(m.clone());
        }
        let mut m = DMatrix::zeros(self.out_dim, self.in_dim);
        let mut e = vec![0.0; self.in_dim];
        for j in 0..self.in_dim {
            e[j] = 1.0;
            let col = self.forward(&e);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(m)
    }

    /// The diagonal when the operator is square and diagonal by construction.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let n = self.in_dim;
        match &self.kind {
            OperatorKind::Identity => Some(vec![1.0; n]),
            OperatorKind::Scale(c) => Some(vec![*c; n]),
            OperatorKind::Mask(keep) => {
                Some(keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
            }
            OperatorKind::ConvexCombo { alpha, inner } => {
                let d = inner.as_diagonal()?;
                Some(d.iter().map(|x| (1.0 - alpha) + alpha * x).collect())
            }
            OperatorKind::Composition(stages) => {
                let mut acc = vec![1.0; n];
                for s in stages {
                    let d = s.as_diagonal()?;
                    acc.iter_mut().zip(d).for_each(|(a, b)| *a *= b);
                }
                Some(acc)
            }
            OperatorKind::Adjoint(inner) => inner.as_diagonal(),
            _ => None,
        }
    }

    fn forward(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Dense(m) => (m * DVector::from_column_slice(v)).data.into(),
            OperatorKind::Mask(keep) => v
                .iter()
                .zip(keep)
                .map(|(&x, &k)| if k { x } else { 0.0 })
                .collect(),
            OperatorKind::Fourier(plan) => plan.forward(v),
            OperatorKind::Convolution {
                kernel,
                kernel_height,
                kernel_width,
                height,
                width,
            } => convolve(v, kernel, *kernel_height, *kernel_width, *height, *width, false),
            OperatorKind::Downsample {
                factor,
                height,
                width,
            } => {
                let (fr, fc) = axis_factors(*factor, *height, *width);
                let mut out = Vec::with_capacity(self.out_dim);
                for r in (0..*height).step_by(fr) {
                    for c in (0..*width).step_by(fc) {
                        out.push(v[r * width + c]);
                    }
                }
                out
            }
            OperatorKind::Identity => v.to_vec(),
            OperatorKind::Scale(c) => v.iter().map(|x| c * x).collect(),
            OperatorKind::Composition(stages) => {
                let mut cur = v.to_vec();
                for s in stages {
                    cur = s.forward(&cur);
                }
                cur
            }
            OperatorKind::ConvexCombo { alpha, inner } => {
                let w = inner.forward(v);
                v.iter()
                    .zip(w)
                    .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                    .collect()
            }
            OperatorKind::Adjoint(inner) => inner.backward(v),
        }
    }

    fn backward(&self, u: &[f64]) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Dense(m) => (m.tr_mul(&DVector::from_column_slice(u))).data.into(),
            OperatorKind::Mask(_) | OperatorKind::Identity | OperatorKind::Scale(_) => {
                self.forward(u)
            }
            OperatorKind::Fourier(plan) => plan.adjoint(u),
            OperatorKind::Convolution {
                kernel,
                kernel_height,
                kernel_width,
                height,
                width,
            } => convolve(u, kernel, *kernel_height, *kernel_width, *height, *width, true),
            OperatorKind::Downsample {
                factor,
                height,
                width,
            } => {
                let (fr, fc) = axis_factors(*factor, *height, *width);
                let mut out = vec![0.0; self.in_dim];
                let mut it = u.iter();
                for r in (0..*height).step_by(fr) {
                    for c in (0..*width).step_by(fc) {
                        out[r * width + c] = *it.next().unwrap();
                    }
                }
                out
            }
            OperatorKind::Composition(stages) => {
                let mut cur = u.to_vec();
                for s in stages.iter().rev() {
                    cur = s.backward(&cur);
                }
                cur
            }
            OperatorKind::ConvexCombo { alpha, inner } => {
                let w = inner.backward(u);
                u.iter()
                    .zip(w)
                    .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                    .collect()
            }
            OperatorKind::Adjoint(inner) => inner.forward(u),
        }
    }
}

fn axis_factors(factor: usize, height: usize, width: usize) -> (usize, usize) {
    (
        if height > 1 { factor } else { 1 },
        if width > 1 { factor } else { 1 },
    )
}

fn downsampled_shape(factor: usize, height: usize, width: usize) -> (usize, usize) {
    let (fr, fc) = axis_factors(factor, height, width);
    (height.div_ceil(fr), width.div_ceil(fc))
}

/// Periodic convolution (or its adjoint, correlation) with a centered kernel.
fn convolve(
    v: &[f64],
    kernel: &[f64],
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    adjoint: bool,
) -> Vec<f64> {
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (hi, wi) = (h as isize, w as isize);
    let mut out = vec![0.0; h * w];
    for r in 0..hi {
        for c in 0..wi {
            let mut acc = 0.0;
            for a in 0..kh as isize {
                for b in 0..kw as isize {
                    let k = kernel[(a as usize) * kw + b as usize];
                    let (dr, dc) = (a - ch, b - cw);
                    let (sr, sc) = if adjoint {
                        (r + dr, c + dc)
                    } else {
                        (r - dr, c - dc)
                    };
                    let idx = sr.rem_euclid(hi) * wi + sc.rem_euclid(wi);
                    acc += k * v[idx as usize];
                }
            }
            out[(r * wi + c) as usize] = acc;
        }
    }
    out
}

fn hash_kind<H: Hasher>(kind: &OperatorKind, state: &mut H) {
    match kind {
        OperatorKind::Dense(m) => {
            0u8.hash(state);
            m.shape().hash(state);
            m.iter().for_each(|x| x.to_bits().hash(state));
        }
        OperatorKind::Mask(keep) => {
            1u8.hash(state);
            keep.hash(state);
        }
        OperatorKind::Fourier(p) => {
            2u8.hash(state);
            (p.height, p.width, p.real_input).hash(state);
        }
        OperatorKind::Convolution {
            kernel,
            kernel_height,
            kernel_width,
            height,
            width,
        } => {
            3u8.hash(state);
            kernel.iter().for_each(|x| x.to_bits().hash(state));
            (kernel_height, kernel_width, height, width).hash(state);
        }
        OperatorKind::Downsample {
            factor,
            height,
            width,
        } => {
            4u8.hash(state);
            (factor, height, width).hash(state);
        }
        OperatorKind::Identity => 5u8.hash(state),
        OperatorKind::Scale(c) => {
            6u8.hash(state);
            c.to_bits().hash(state);
        }
        OperatorKind::Composition(stages) => {
            7u8.hash(state);
            stages.iter().for_each(|s| s.fingerprint.hash(state));
        }
        OperatorKind::ConvexCombo { alpha, inner } => {
            8u8.hash(state);
            alpha.to_bits().hash(state);
            inner.fingerprint.hash(state);
        }
        OperatorKind::Adjoint(inner) => {
            9u8.hash(state);
            inner.fingerprint.hash(state);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn mask_zero_fills() {
        let m = LinearOperator::mask_indices(2, &[0]).unwrap();
        assert_eq!(m.apply(&v(&[3.0, 4.0])).unwrap(), v(&[3.0, 0.0]));
        assert_eq!(m.adjoint_apply(&v(&[3.0, 0.0])).unwrap(), v(&[3.0, 0.0]));
    }

    #[test]
    fn convex_combo_of_zero_scale_halves() {
        let op = LinearOperator::convex_combo(0.5, LinearOperator::scale(0.0, 2)).unwrap();
        assert_eq!(op.apply(&v(&[2.0, 2.0])).unwrap(), v(&[1.0, 1.0]));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let op = LinearOperator::convolution_1d(vec![1.0], 3).unwrap();
        assert_eq!(op.apply(&v(&[5.0, 6.0, 7.0])).unwrap(), v(&[5.0, 6.0, 7.0]));
    }

    #[test]
    fn downsample_adjoint_inserts_zeros() {
        let op = LinearOperator::downsample(2, 1, 4).unwrap();
        assert_eq!(op.out_dim(), 2);
        assert_eq!(
            op.adjoint_apply(&v(&[1.0, 2.0])).unwrap(),
            v(&[1.0, 0.0, 2.0, 0.0])
        );
        // dense transpose oracle
        let d = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(d.transpose() * v(&[1.0, 2.0]), v(&[1.0, 0.0, 2.0, 0.0]));
        assert_eq!(op.to_dense().unwrap(), d);
    }

    #[test]
    fn fourier_adjoint_inverts() {
        let op = LinearOperator::fourier(4, 3, true);
        let x = v(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 2.0, 2.5, 0.25, -0.75, 4.0]);
        let back = op.adjoint_apply(&op.apply(&x).unwrap()).unwrap();
        assert!((back - &x).norm() < 1e-12 * x.norm());
        // unitary: norm preserved
        assert!((op.apply(&x).unwrap().norm() - x.norm()).abs() < 1e-12 * x.norm());
    }

    #[test]
    fn gram_examples() {
        let id = LinearOperator::identity(2);
        assert_eq!(id.gram_apply(&v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
        let m = LinearOperator::mask_indices(3, &[1]).unwrap();
        assert_eq!(m.gram_apply(&v(&[4.0, 5.0, 6.0])).unwrap(), v(&[0.0, 5.0, 0.0]));
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let op = LinearOperator::dense(d.clone());
        // explicit 2×2 oracle: HᵀH = [[1,1],[1,2]]
        let hth = d.transpose() * &d;
        assert_eq!(hth, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]));
        assert_eq!(op.gram_apply(&v(&[1.0, 1.0])).unwrap(), v(&[2.0, 3.0]));
    }

    #[test]
    fn to_dense_examples() {
        assert_eq!(
            LinearOperator::identity(2).to_dense().unwrap(),
            DMatrix::identity(2, 2)
        );
        assert_eq!(
            LinearOperator::scale(3.0, 1).to_dense().unwrap(),
            DMatrix::from_element(1, 1, 3.0)
        );
        let combo = LinearOperator::convex_combo(
            0.25,
            LinearOperator::mask_indices(2, &[0]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            combo.to_dense().unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.75])
        );
    }

    #[test]
    fn dense_cap_refuses() {
        let op = LinearOperator::identity(4);
        assert!(matches!(op.to_dense_capped(15), Err(Error::Refused(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = LinearOperator::identity(3);
        match op.apply(&v(&[1.0])) {
            Err(Error::DimensionMismatch {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(LinearOperator::compose(vec![
            LinearOperator::identity(2),
            LinearOperator::identity(3)
        ])
        .is_err());
    }

    #[test]
    fn double_adjoint_round_trips() {
        let op = LinearOperator::downsample(2, 1, 5).unwrap();
        let back = op.adjoint().adjoint();
        let x = v(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(back.apply(&x).unwrap(), op.apply(&x).unwrap());
        assert_eq!(op.adjoint().in_dim(), 3);
    }

    #[test]
    fn fingerprints_identify_structure() {
        let a = LinearOperator::mask_indices(4, &[1, 2]).unwrap();
        let b = LinearOperator::mask_indices(4, &[1, 2]).unwrap();
        let c = LinearOperator::mask_indices(4, &[1]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
