//! Linear-operator layer: dense and CSR storage, symmetric operator trees
//! evaluated matrix-free, weighted inner products and Cholesky utilities.

mod csr;
pub(crate) mod dense;
mod operator;

pub use csr::CsrMatrix;
pub use dense::{cholesky_factor, cholesky_solve, DenseMatrix};
pub use operator::SpdOperator;

use crate::error::{Error, Result};

/// Relative PSD slack used by [`weighted_norm`].
pub const DEFAULT_PSD_TOLERANCE: f64 = 1e-10;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm2(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            stage: format!("{what} (entry {i})"),
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

/// `uᵀ W v`.
pub fn weighted_inner(u: &[f64], v: &[f64], w: &SpdOperator) -> Result<f64> {
    check_len("weighted_inner", w.dim(), u.len())?;
    let wv = w.apply(v)?;
    Ok(dot(u, &wv))
}

/// `sqrt(uᵀ W u)`, clamped at zero. Negative quadratic forms beyond
/// `1e-10 * ||u||²` are rejected as a non-PSD weight.
pub fn weighted_norm(u: &[f64], w: &SpdOperator) -> Result<f64> {
    weighted_norm_with_tolerance(u, w, DEFAULT_PSD_TOLERANCE)
}

pub fn weighted_norm_with_tolerance(u: &[f64], w: &SpdOperator, tol_psd: f64) -> Result<f64> {
    let q = weighted_inner(u, u, w)?;
    if q < -tol_psd * dot(u, u) {
        return Err(Error::NotPsd { value: q });
    }
    Ok(q.max(0.0).sqrt())
}
