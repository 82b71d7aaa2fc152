//! Dense column-major matrices and the few kernels built on top of them.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub type Vector = DVector<f64>;

/// Column-major real matrix with finite entries.
///
/// Holds dictionaries and every layer weight. Reads go through `Deref` to the
/// underlying `nalgebra` matrix; construction is checked.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, column_major: Vec<f64>) -> Result<Self> {
        if rows * cols != column_major.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                column_major.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_vec(rows, cols, column_major))
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite entry at column-major offset {pos}"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix produced by arithmetic on already finite inputs.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        debug_assert!(m.iter().all(|v| v.is_finite()));
        Self(m)
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    /// Column-major entries.
    pub fn data(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        let r = self.rows();
        &self.0.as_slice()[j * r..(j + 1) * r]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| norm2(self.col(j))).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_trusted(&self.0 * factor)
    }

    /// Ratio of extreme singular values, via a full SVD.
    pub fn condition_number(&self) -> f64 {
        let sv = self.0.clone().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

impl Deref for DenseMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const SPECTRAL_RTOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Largest singular value by power iteration on `MᵀM`.
///
/// Non-convergence is not an error: the last estimate is returned with
/// `converged == false`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<SpectralEstimate> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Precondition("spectral norm of an empty matrix".into()));
    }
    let mut r = rng::stream(0x5eed, Domain::Misc, m.ncols() as u64);
    let mut v = Vector::from_fn(m.ncols(), |_, _| r.sample::<f64, _>(StandardNormal));
    let nv = v.norm();
    v /= nv;

    let mut sigma = 0.0;
    for it in 1..=SPECTRAL_MAX_ITERS {
        let mv = m * &v;
        let next = mv.norm();
        if next == 0.0 {
            // v landed in the null space; only possible for the zero matrix
            // with a generic start.
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let w = m.tr_mul(&mv);
        let nw = w.norm();
        v = w / nw;
        let done = (next - sigma).abs() <= SPECTRAL_RTOL * next;
        sigma = next;
        if done {
            // One more application gives the Rayleigh-quotient estimate
            // for the refined vector.
            let value = (m * &v).norm().max(sigma);
            return Ok(SpectralEstimate {
                value,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SpectralEstimate {
        value: sigma,
        iterations: SPECTRAL_MAX_ITERS,
        converged: false,
    })
}

/// Soft-thresholding kept here as a scalar kernel for the hot loops.
#[inline]
pub(crate) fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svd_max(m: &DMatrix<f64>) -> f64 {
        m.clone().singular_values().max()
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.col(1), &[3.0, 4.0]);
        assert_eq!(m[(0, 1)], 3.0);
    }

    #[test]
    fn spectral_norm_of_identity_and_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((spectral_norm(&i3).unwrap().value - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        let est = spectral_norm(&d).unwrap();
        assert!(est.converged);
        assert!((est.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, Domain::Misc, 99);
            let m = DMatrix::from_fn(10, 20, |_, _| r.sample::<f64, _>(StandardNormal));
            let est = spectral_norm(&m).unwrap();
            assert!(est.converged);
            assert!((est.value - svd_max(&m)).abs() < 1e-8, "{} vs {}", est.value, svd_max(&m));
        }
    }

    #[test]
    fn spectral_norm_is_bracketed() {
        let mut r = rng::stream(3, Domain::Misc, 5);
        let m = DMatrix::from_fn(12, 7, |_, _| r.sample::<f64, _>(StandardNormal));
        let s = spectral_norm(&m).unwrap().value;
        for _ in 0..100 {
            let v = Vector::from_fn(7, |_, _| r.sample::<f64, _>(StandardNormal));
            assert!((&m * &v).norm() / v.norm() <= s * (1.0 + 1e-12));
        }
        assert!(s <= m.norm() + 1e-12);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let z = DMatrix::<f64>::zeros(3, 4);
        assert_eq!(spectral_norm(&z).unwrap().value, 0.0);
        assert!(spectral_norm(&DMatrix::<f64>::zeros(0, 3)).is_err());
    }
}
