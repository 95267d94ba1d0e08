use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Finite dense matrix. Thin wrapper over `nalgebra::DMatrix` that enforces
/// finiteness on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "dense matrix entries",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        Self::from_nalgebra(DMatrix::from_row_slice(rows, cols, &entries))
    }

    pub fn from_nalgebra(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if let Some(k) = m.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("dense matrix entry {k}"),
            });
        }
        Ok(DenseMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::from_nalgebra(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols());
        (0..self.rows())
            .map(|i| self.0.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.rows().min(self.cols());
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(M + Mᵀ) / 2`, exactly symmetric.
    pub fn symmetrized(&self) -> Self {
        let m = &self.0;
        DenseMatrix((m + m.transpose()) * 0.5)
    }
}

/// Lower-triangular `L` with `L Lᵀ = m`.
pub fn cholesky_factor(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "cholesky needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let scale = m.max_abs();
    let asym = m.asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(format!(
            "max |m_ij - m_ji| = {asym:e} (scale {scale:e})"
        )));
    }
    factor_lower(m.inner(), 0.0).map(DenseMatrix)
}

/// Column Cholesky. A pivot `p` with `p <= rel_floor * m_kk` fails at index k.
pub(crate) fn factor_lower(m: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut pivot = m[(k, k)];
        for p in 0..k {
            pivot -= l[(k, p)] * l[(k, p)];
        }
        if !(pivot > rel_floor * m[(k, k)].abs()) || pivot <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: k });
        }
        let lkk = pivot.sqrt();
        l[(k, k)] = lkk;
        for i in (k + 1)..n {
            let mut s = m[(i, k)];
            for p in 0..k {
                s -= l[(i, p)] * l[(k, p)];
            }
            l[(i, k)] = s / lkk;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    crate::linops::check_len("cholesky_solve", l.rows(), b.len())?;
    Ok(solve_with_lower(l.inner(), b))
}

pub(crate) fn solve_with_lower(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}
