//! Joint solves of `J` related systems `A_j x_j = b_j`.
//!
//! The family is stacked into one block-diagonal system of dimension `dJ`
//! (system-major ordering) and handed to the single-system solver under a
//! joint prior. Each iteration picks one stacked direction with `J` blocks
//! and observes one scalar; systems interact only through off-diagonal
//! blocks of the prior covariance.

use crate::bayescg::{self, GaussianBelief, LinearSystem, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::linops::{cholesky_factor, check_len, DenseMatrix, SpdOperator};

/// `J ≥ 1` systems of a common dimension `d`.
#[derive(Debug, Clone)]
pub struct SystemFamily {
    systems: Vec<LinearSystem>,
}

impl SystemFamily {
    pub fn new(systems: Vec<LinearSystem>) -> Result<Self> {
        let d = systems
            .first()
            .ok_or_else(|| Error::invalid("system family must contain at least one system"))?
            .dim();
        if let Some((j, s)) = systems.iter().enumerate().find(|(_, s)| s.dim() != d) {
            return Err(Error::invalid(format!(
                "all systems must share one dimension: system 0 has {d}, system {j} has {}",
                s.dim()
            )));
        }
        Ok(SystemFamily { systems })
    }

    pub fn systems(&self) -> &[LinearSystem] {
        &self.systems
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn block_dim(&self) -> usize {
        self.systems[0].dim()
    }
}

#[derive(Debug, Clone)]
pub struct StackedSystem {
    system: LinearSystem,
    block_dim: usize,
    block_count: usize,
}

impl StackedSystem {
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn operator(&self) -> &SpdOperator {
        self.system.operator()
    }

    pub fn rhs(&self) -> &[f64] {
        self.system.rhs()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    /// Index range of block `j` in stacked vectors.
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        j * self.block_dim..(j + 1) * self.block_dim
    }

    /// Splits a stacked vector into per-system slices.
    pub fn split<'a>(&self, v: &'a [f64]) -> Vec<&'a [f64]> {
        v.chunks_exact(self.block_dim).collect()
    }
}

/// `Ā = BlockDiag[A₁,…,A_J]`, `b̄ = (b₁ᵀ,…,b_Jᵀ)ᵀ`.
pub fn stack(family: &SystemFamily) -> Result<StackedSystem> {
    let ops = family.systems.iter().map(|s| s.operator().clone()).collect();
    let rhs = family.systems.iter().flat_map(|s| s.rhs().iter().copied()).collect();
    Ok(StackedSystem {
        system: LinearSystem::new(SpdOperator::block_diagonal(ops)?, rhs)?,
        block_dim: family.block_dim(),
        block_count: family.len(),
    })
}

/// Separable prior covariance `B ⊗ Σ₀`.
#[derive(Debug, Clone)]
pub struct SeparableCovariance {
    task_cov: DenseMatrix,
    within_cov: SpdOperator,
}

impl SeparableCovariance {
    /// `task_cov` must be symmetric positive definite.
    pub fn new(task_cov: DenseMatrix, within_cov: SpdOperator) -> Result<Self> {
        cholesky_factor(&task_cov)?;
        Ok(SeparableCovariance { task_cov, within_cov })
    }

    pub fn task_cov(&self) -> &DenseMatrix {
        &self.task_cov
    }

    pub fn within_cov(&self) -> &SpdOperator {
        &self.within_cov
    }

    pub fn dim(&self) -> usize {
        self.task_cov.rows() * self.within_cov.dim()
    }

    /// Matrix-free operator; never densified.
    pub fn to_operator(&self) -> Result<SpdOperator> {
        SpdOperator::kronecker(self.task_cov.clone(), self.within_cov.clone())
    }
}

/// `(B ⊗ Σ₀) v`: apply `Σ₀` to each length-`d` block, then mix blocks by `B`.
pub fn kron_matvec(cov: &SeparableCovariance, v: &[f64]) -> Result<Vec<f64>> {
    check_len("kron_matvec", cov.dim(), v.len())?;
    cov.to_operator()?.apply(v)
}

/// Joint BayesCG over the stacked family.
pub fn solve_multi(
    family: &SystemFamily,
    prior_mean: Vec<f64>,
    prior_cov: SpdOperator,
    config: SolverConfig,
) -> Result<(StackedSystem, Solution)> {
    let stacked = stack(family)?;
    check_len("joint prior", stacked.system.dim(), prior_cov.dim())?;
    let prior = GaussianBelief::new(prior_mean, prior_cov)?;
    let solution = bayescg::solve(stacked.system.clone(), prior, config)?;
    Ok((stacked, solution))
}

/// Block `j` (0-based) of a joint belief: the mean block and the `(j, j)`
/// covariance block (base block minus the restricted downdate columns).
pub fn extract_marginal(belief: &GaussianBelief, stacked: &StackedSystem, j: usize) -> Result<GaussianBelief> {
    check_len("marginal extraction", stacked.system.dim(), belief.dim())?;
    if j >= stacked.block_count {
        return Err(Error::invalid(format!(
            "system index {j} out of range for {} systems",
            stacked.block_count
        )));
    }
    if stacked.block_count == 1 {
        return Ok(belief.clone());
    }
    let range = stacked.block_range(j);
    let base = match belief.base_cov().blocks() {
        Some(blocks) if blocks.len() == stacked.block_count && blocks[j].dim() == stacked.block_dim => {
            blocks[j].clone()
        }
        _ => belief.base_cov().principal_block(range.start, stacked.block_dim)?,
    };
    let downdate = belief
        .downdate_cols()
        .iter()
        .map(|f| f[range.clone()].to_vec())
        .collect();
    GaussianBelief::with_downdate(belief.mean()[range].to_vec(), base, downdate)
}
