//! Small dense helpers on top of faer.

use faer::linalg::matmul::matmul;
use faer::traits::Conjugate;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Consistency(format!("Hermitian eigensolver failed: {e:?}")))?;
    let values = evd.S().column_vector().iter().map(|z| z.re).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn hermitian_eigenvalues(m: MatRef<'_, C64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Consistency(format!("Hermitian eigensolver failed: {e:?}")))
}

/// `‖m‖₁` for Hermitian `m`: sum of absolute eigenvalues.
pub fn trace_norm_hermitian(m: MatRef<'_, C64>) -> Result<f64> {
    Ok(hermitian_eigenvalues(m)?.iter().map(|v| v.abs()).sum())
}

/// `dst = lhs · rhs`, always sequential so results do not depend on the
/// thread pool.
pub(crate) fn mul_into<L, R>(dst: &mut Mat<C64>, lhs: MatRef<'_, L>, rhs: MatRef<'_, R>)
where
    L: Conjugate<Canonical = C64>,
    R: Conjugate<Canonical = C64>,
{
    matmul(dst.as_mut(), Accum::Replace, lhs, rhs, ONE, Par::Seq);
}

pub(crate) fn mul<L, R>(lhs: MatRef<'_, L>, rhs: MatRef<'_, R>) -> Mat<C64>
where
    L: Conjugate<Canonical = C64>,
    R: Conjugate<Canonical = C64>,
{
    let mut out = Mat::zeros(lhs.nrows(), rhs.ncols());
    mul_into(&mut out, lhs, rhs);
    out
}

pub fn identity(dim: usize) -> Mat<C64> {
    Mat::from_fn(dim, dim, |i, j| if i == j { ONE } else { ZERO })
}

pub fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

/// `max |m - m†|`.
pub fn hermiticity_defect(m: MatRef<'_, C64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows() - 1) {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: MatRef<'_, C64>) -> C64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn frobenius_sq(m: MatRef<'_, C64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)].norm_sqr();
        }
    }
    acc
}

/// `v v†` for a column stored as a slice.
pub fn outer(v: &[C64]) -> Mat<C64> {
    Mat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
}
