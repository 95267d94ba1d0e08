//! Dense reference implementations used to check the iterative solver.
//! Slow on purpose and capped in size.

use nalgebra::{DMatrix, DVector};

use crate::bayescg::{GaussianBelief, LinearSystem};
use crate::error::{Error, Result};
use crate::linops::dense::{factor_lower, solve_with_lower};
use crate::linops::{axpy, check_len, dot, norm2, DenseMatrix, SpdOperator};

/// Largest dimension the dense oracle will materialize.
pub const MAX_DENSE_DIM: usize = 256;

/// Pivot floor, relative to the Gram diagonal, below which `Λ_m` is singular.
const GRAM_SINGULAR_TOLERANCE: f64 = 1e-12;

fn cap(dim: usize) -> Result<()> {
    if dim > MAX_DENSE_DIM {
        Err(Error::TooLarge {
            dim,
            max: MAX_DENSE_DIM,
        })
    } else {
        Ok(())
    }
}

fn dense_cov(belief: &GaussianBelief) -> Result<DMatrix<f64>> {
    let mut m = belief.base_cov().to_dense()?.into_inner();
    for f in belief.downdate_cols() {
        let f = DVector::from_column_slice(f);
        m -= &f * f.transpose();
    }
    Ok(m)
}

/// Literal batch conditioning:
///
/// ```text
/// Λ   = Sᵀ A Σ₀ Aᵀ S
/// x_m = x₀ + Σ₀ Aᵀ S Λ⁻¹ Sᵀ r₀
/// Σ_m = Σ₀ − Σ₀ Aᵀ S Λ⁻¹ Sᵀ A Σ₀
/// ```
///
/// Directions need not be normalized. `Λ` is factored by Cholesky.
pub fn batch_posterior(system: &LinearSystem, prior: &GaussianBelief, directions: &[Vec<f64>]) -> Result<GaussianBelief> {
    let n = system.dim();
    cap(n)?;
    check_len("batch_posterior prior", n, prior.dim())?;
    if directions.is_empty() {
        return Ok(prior.clone());
    }
    for s in directions {
        check_len("batch_posterior direction", n, s.len())?;
    }
    let a = system.operator().to_dense()?.into_inner();
    let sigma0 = dense_cov(prior)?;
    let x0 = DVector::from_column_slice(prior.mean());
    let b = DVector::from_column_slice(system.rhs());
    let r0 = &b - &a * &x0;

    let m = directions.len();
    let s = DMatrix::from_fn(n, m, |i, j| directions[j][i]);
    let sigma_at_s = &sigma0 * a.transpose() * &s;
    let lambda = s.transpose() * &a * &sigma_at_s;
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    let l = factor_lower(&lambda, GRAM_SINGULAR_TOLERANCE).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::SingularGram { index: pivot },
        other => other,
    })?;

    let st_r0 = s.transpose() * &r0;
    let coeff = DVector::from_vec(solve_with_lower(&l, st_r0.as_slice()));
    let mean = &x0 + &sigma_at_s * coeff;

    // Λ⁻¹ (Σ₀ Aᵀ S)ᵀ column by column.
    let mut lambda_inv_ft = DMatrix::<f64>::zeros(m, n);
    for i in 0..n {
        let col: Vec<f64> = sigma_at_s.row(i).iter().copied().collect();
        lambda_inv_ft.set_column(i, &DVector::from_vec(solve_with_lower(&l, &col)));
    }
    let cov = &sigma0 - &sigma_at_s * lambda_inv_ft;
    let cov = DenseMatrix::from_nalgebra(cov)?.symmetrized();
    GaussianBelief::new(mean.as_slice().to_vec(), SpdOperator::dense(cov)?)
}

/// Ground-truth `A⁻¹ b` by dense Cholesky, with a residual self-check.
pub fn direct_solve(system: &LinearSystem) -> Result<Vec<f64>> {
    cap(system.dim())?;
    let a = system.operator().to_dense()?.symmetrized();
    let l = factor_lower(a.inner(), 0.0)?;
    let x = solve_with_lower(&l, system.rhs());
    let r = system.residual(&x)?;
    let b_norm = norm2(system.rhs());
    let relative = if b_norm > 0.0 { norm2(&r) / b_norm } else { norm2(&r) };
    if relative > 1e-10 {
        return Err(Error::ResidualCheck {
            relative,
            tolerance: 1e-10,
        });
    }
    Ok(x)
}

/// Textbook unpreconditioned CG. Returns `[x₀, x₁, …]`, stopping early once
/// the residual vanishes to machine precision.
pub fn reference_cg(system: &LinearSystem, x0: &[f64], iters: usize) -> Result<Vec<Vec<f64>>> {
    check_len("reference_cg x0", system.dim(), x0.len())?;
    let a = system.operator();
    let b_norm = norm2(system.rhs()).max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();
    let mut r = system.residual(&x)?;
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterates = vec![x.clone()];
    for _ in 0..iters {
        if rr.sqrt() <= f64::EPSILON * b_norm {
            break;
        }
        let ap = a.apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::invalid(format!(
                "conjugate gradient breakdown at iteration {}: pᵀAp = {pap:e}",
                iterates.len()
            )));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        iterates.push(x.clone());
    }
    Ok(iterates)
}
