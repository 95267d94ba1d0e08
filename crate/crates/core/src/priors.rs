//! Prior constructors, from uninformative to structure-informed.
//!
//! All priors have zero mean. Within-system covariance families:
//! scaled identity `γI`, Jacobi `diag(A)⁻¹`, and preconditioner inverse
//! `P⁻¹`. For families of systems the joint covariance is either
//! block-diagonal or separable `B ⊗ Σ₀`, with `B` built from a constant
//! correlation or a squared-exponential kernel over per-system parameters.

use serde::{Deserialize, Serialize};

use crate::bayescg::GaussianBelief;
use crate::error::{Error, Result};
use crate::linops::{cholesky_factor, DenseMatrix, SpdOperator};
use crate::multibcg::SeparableCovariance;

/// Diagonal jitter tried once when a task covariance fails to factor.
pub const TASK_JITTER: f64 = 1e-10;

pub fn identity_prior(d: usize, gamma: f64) -> Result<GaussianBelief> {
    if d == 0 {
        return Err(Error::invalid("prior dimension must be at least 1"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(GaussianBelief::zero_mean(SpdOperator::scaled_identity(d, gamma)))
}

/// `Σ₀ = diag(1/a₁₁, …, 1/a_dd)`.
pub fn jacobi_prior(a: &SpdOperator) -> Result<GaussianBelief> {
    let diag = a.diagonal_entries()?;
    if let Some(i) = diag.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::invalid(format!(
            "Jacobi prior needs a positive diagonal; entry {i} is {}",
            diag[i]
        )));
    }
    let inv = diag.into_iter().map(|x| 1.0 / x).collect();
    Ok(GaussianBelief::zero_mean(SpdOperator::diagonal(inv)?))
}

/// `Σ₀ = P⁻¹`, applied through a Cholesky solve.
pub fn preconditioner_prior(p: &SpdOperator) -> Result<GaussianBelief> {
    Ok(GaussianBelief::zero_mean(SpdOperator::cholesky_inverse(p)?))
}

pub fn custom_dense_prior(cov: DenseMatrix) -> Result<GaussianBelief> {
    Ok(GaussianBelief::zero_mean(SpdOperator::dense(cov)?))
}

/// A task covariance and whether jitter had to be added to make it PD.
#[derive(Debug, Clone)]
pub struct TaskCovariance {
    pub matrix: DenseMatrix,
    pub jitter_applied: bool,
}

fn ensure_pd(matrix: DenseMatrix) -> Result<TaskCovariance> {
    if cholesky_factor(&matrix).is_ok() {
        return Ok(TaskCovariance {
            matrix,
            jitter_applied: false,
        });
    }
    let mut m = matrix.into_inner();
    for i in 0..m.nrows() {
        m[(i, i)] += TASK_JITTER;
    }
    let matrix = DenseMatrix::from_nalgebra(m)?;
    cholesky_factor(&matrix)?;
    Ok(TaskCovariance {
        matrix,
        jitter_applied: true,
    })
}

/// `B_ij = exp(−(θ_i − θ_j)² / (2 ρ²))`.
pub fn task_correlation_matrix(params: &[f64], rho_scale: f64) -> Result<TaskCovariance> {
    if params.is_empty() {
        return Err(Error::invalid("at least one task parameter is required"));
    }
    if !(rho_scale > 0.0) || !rho_scale.is_finite() {
        return Err(Error::invalid(format!("rho_scale must be positive, got {rho_scale}")));
    }
    crate::linops::ensure_finite(params, "task parameters")?;
    let j = params.len();
    let mut entries = Vec::with_capacity(j * j);
    for a in params {
        for b in params {
            entries.push((-(a - b).powi(2) / (2.0 * rho_scale * rho_scale)).exp());
        }
    }
    ensure_pd(DenseMatrix::from_row_major(j, j, entries)?)
}

/// `B = (1 − ρ) I + ρ 11ᵀ`, PD for `−1/(J−1) < ρ < 1`.
pub fn constant_task_correlation(j: usize, rho: f64) -> Result<TaskCovariance> {
    if j == 0 {
        return Err(Error::invalid("at least one task is required"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("task correlation must satisfy |rho| < 1, got {rho}")));
    }
    let entries = (0..j * j)
        .map(|k| if k / j == k % j { 1.0 } else { rho })
        .collect();
    ensure_pd(DenseMatrix::from_row_major(j, j, entries)?)
}

/// Within-system covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WithinPrior {
    IdentityScaled { gamma: f64 },
    Jacobi,
    Preconditioner,
}

impl WithinPrior {
    /// Covariance for system matrix `a` (Jacobi and preconditioner read `a`).
    pub fn covariance(&self, a: &SpdOperator) -> Result<SpdOperator> {
        let belief = match *self {
            WithinPrior::IdentityScaled { gamma } => identity_prior(a.dim(), gamma)?,
            WithinPrior::Jacobi => jacobi_prior(a)?,
            WithinPrior::Preconditioner => preconditioner_prior(a)?,
        };
        Ok(belief.base_cov().clone())
    }
}

/// Task-covariance specification for separable joint priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Constant { rho: f64 },
    SquaredExponential { thetas: Vec<f64>, rho_scale: f64 },
}

impl TaskSpec {
    pub fn build(&self, j: usize) -> Result<TaskCovariance> {
        match self {
            TaskSpec::Constant { rho } => constant_task_correlation(j, *rho),
            TaskSpec::SquaredExponential { thetas, rho_scale } => {
                if thetas.len() != j {
                    return Err(Error::invalid(format!(
                        "expected {j} task parameters, got {}",
                        thetas.len()
                    )));
                }
                task_correlation_matrix(thetas, *rho_scale)
            }
        }
    }
}

/// Joint prior for a family of `J` systems of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// `BlockDiag[Σ₀(A₁), …, Σ₀(A_J)]`.
    BlockDiagonal { within: WithinPrior },
    /// `B ⊗ Σ₀(A_ref)` with `Σ₀` built from the reference matrix.
    Separable { within: WithinPrior, task: TaskSpec },
}

impl PriorSpec {
    /// Builds the joint covariance. `reference` supplies the matrix used by
    /// the within-system family in the separable case.
    pub fn joint_covariance(&self, matrices: &[SpdOperator], reference: usize) -> Result<(SpdOperator, bool)> {
        match self {
            PriorSpec::BlockDiagonal { within } => {
                let blocks = matrices.iter().map(|a| within.covariance(a)).collect::<Result<Vec<_>>>()?;
                if blocks.len() == 1 {
                    return Ok((blocks.into_iter().next().unwrap(), false));
                }
                Ok((SpdOperator::block_diagonal(blocks)?, false))
            }
            PriorSpec::Separable { within, task } => {
                let a_ref = matrices
                    .get(reference)
                    .ok_or_else(|| Error::invalid("reference system out of range"))?;
                let tc = task.build(matrices.len())?;
                let cov = SeparableCovariance::new(tc.matrix, within.covariance(a_ref)?)?;
                Ok((cov.to_operator()?, tc.jitter_applied))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{dot, norm2};
    use crate::problems::gen_random_spd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn assert_valid_cov(cov: &SpdOperator) {
        cov.check_symmetry(5, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = cov.to_dense().unwrap().max_abs();
        for _ in 0..5 {
            let v = probe(&mut rng, cov.dim());
            assert!(dot(&v, &cov.apply(&v).unwrap()) >= -1e-10 * dot(&v, &v) * scale);
        }
    }

    #[test]
    fn identity_prior_examples() {
        let p = identity_prior(3, 1.0).unwrap();
        assert_eq!(p.base_cov().to_dense().unwrap(), DenseMatrix::identity(3));
        assert_eq!(p.mean(), &[0.0; 3]);
        let p = identity_prior(1, 4.0).unwrap();
        assert_eq!(p.base_cov().apply(&[1.0]).unwrap(), vec![4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = identity_prior(5, 2.5).unwrap();
        let v = probe(&mut rng, 5);
        let q = dot(&v, &p.base_cov().apply(&v).unwrap());
        assert!((q - 2.5 * dot(&v, &v)).abs() < 1e-14);
        assert!(identity_prior(3, 0.0).is_err());
        assert!(identity_prior(3, -1.0).is_err());
        assert_valid_cov(p.base_cov());
    }

    #[test]
    fn jacobi_examples() {
        let a = SpdOperator::diagonal(vec![2.0, 4.0]).unwrap();
        let p = jacobi_prior(&a).unwrap();
        assert_eq!(p.base_cov().diagonal_entries().unwrap(), vec![0.5, 0.25]);
        let p = jacobi_prior(&SpdOperator::identity(3)).unwrap();
        assert_eq!(p.base_cov().to_dense().unwrap(), DenseMatrix::identity(3));

        let m = gen_random_spd(4, 30.0, 9).unwrap();
        let p = jacobi_prior(&SpdOperator::dense(m.clone()).unwrap()).unwrap();
        let got = p.base_cov().to_dense().unwrap();
        for i in 0..4 {
            assert_eq!(got.get(i, i), 1.0 / m.get(i, i));
        }
        assert_valid_cov(p.base_cov());
    }

    #[test]
    fn jacobi_names_bad_index() {
        let a = SpdOperator::diagonal(vec![1.0, 0.0, 2.0]).unwrap();
        let err = jacobi_prior(&a).unwrap_err();
        assert!(err.to_string().contains("entry 1"), "{err}");
    }

    #[test]
    fn preconditioner_examples() {
        let p = preconditioner_prior(&SpdOperator::identity(3)).unwrap();
        assert_eq!(p.base_cov().apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let p = preconditioner_prior(&SpdOperator::diagonal(vec![2.0, 2.0]).unwrap()).unwrap();
        let got = p.base_cov().apply(&[1.0, 3.0]).unwrap();
        assert!((got[0] - 0.5).abs() <= 1e-15 && (got[1] - 1.5).abs() <= 1e-15);

        let m = gen_random_spd(4, 50.0, 12).unwrap();
        let p = preconditioner_prior(&SpdOperator::dense(m.clone()).unwrap()).unwrap();
        let inv = m.inner().clone().try_inverse().unwrap();
        let v = [0.2, -1.0, 0.7, 3.0];
        let want = &inv * nalgebra::DVector::from_column_slice(&v);
        let got = p.base_cov().apply(&v).unwrap();
        let diff: Vec<f64> = got.iter().zip(want.iter()).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-10 * want.norm());
        assert_valid_cov(p.base_cov());

        let indefinite = SpdOperator::dense(DenseMatrix::from_row_major(2, 2, vec![1., 2., 2., 1.]).unwrap()).unwrap();
        assert!(preconditioner_prior(&indefinite).is_err());
    }

    #[test]
    fn task_correlation_examples() {
        let tc = task_correlation_matrix(&[0.7, 0.7, 0.7], 1.0).unwrap();
        assert!(tc.jitter_applied);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 + TASK_JITTER } else { 1.0 };
                assert_eq!(tc.matrix.get(i, j), expect);
            }
        }
        let tc = task_correlation_matrix(&[3.0], 0.5).unwrap();
        assert_eq!(tc.matrix, DenseMatrix::identity(1));
        assert!(!tc.jitter_applied);

        let tc = task_correlation_matrix(&[0.0, 10.0], 1.0).unwrap();
        assert_eq!(tc.matrix.get(0, 0), 1.0);
        assert!(tc.matrix.get(0, 1) < 1e-21);
        assert_eq!(tc.matrix.get(0, 1), (-50.0f64).exp());
        assert!(task_correlation_matrix(&[0.0], 0.0).is_err());
    }

    #[test]
    fn constant_correlation_bounds() {
        let tc = constant_task_correlation(2, 0.9).unwrap();
        assert_eq!(tc.matrix.to_row_major(), vec![1.0, 0.9, 0.9, 1.0]);
        assert!(constant_task_correlation(2, 1.0).is_err());
        assert!(constant_task_correlation(3, -0.6).is_err());
        assert_eq!(constant_task_correlation(3, 0.0).unwrap().matrix, DenseMatrix::identity(3));
    }

    #[test]
    fn joint_covariances_are_valid() {
        let a1 = SpdOperator::dense(gen_random_spd(3, 10.0, 1).unwrap()).unwrap();
        let a2 = SpdOperator::dense(gen_random_spd(3, 10.0, 2).unwrap()).unwrap();
        let mats = vec![a1, a2];
        for spec in [
            PriorSpec::BlockDiagonal {
                within: WithinPrior::Jacobi,
            },
            PriorSpec::Separable {
                within: WithinPrior::IdentityScaled { gamma: 2.0 },
                task: TaskSpec::SquaredExponential {
                    thetas: vec![0.1, 0.4],
                    rho_scale: 0.5,
                },
            },
            PriorSpec::Separable {
                within: WithinPrior::Preconditioner,
                task: TaskSpec::Constant { rho: 0.5 },
            },
        ] {
            let (cov, _) = spec.joint_covariance(&mats, 0).unwrap();
            assert_eq!(cov.dim(), 6);
            assert_valid_cov(&cov);
        }
        let bad = PriorSpec::Separable {
            within: WithinPrior::Jacobi,
            task: TaskSpec::SquaredExponential {
                thetas: vec![1.0],
                rho_scale: 1.0,
            },
        };
        assert!(bad.joint_covariance(&mats, 0).is_err());
    }
}
