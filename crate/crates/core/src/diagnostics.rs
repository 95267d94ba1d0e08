//! Solver measurements: conjugacy, uncertainty summaries, empirical
//! coverage, and the block-diagonal reduction study.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bayescg::{GaussianBelief, NextDirection, SolverConfig, SolverState};
use crate::error::{Error, Result};
use crate::linops::{check_len, dot, norm2, SpdOperator};
use crate::multibcg::{stack, SystemFamily};
use crate::oracle::direct_solve;

/// Pass threshold for the final-posterior agreement in [`reduction_study`].
pub const REDUCTION_TOLERANCE: f64 = 1e-8;

/// `max_{i ≤ j} |s_iᵀ W s_j − δ_ij|`.
pub fn conjugacy_defect(directions: &[Vec<f64>], w: &SpdOperator) -> Result<f64> {
    if directions.is_empty() {
        return Err(Error::invalid("conjugacy defect needs at least one direction"));
    }
    let ws: Vec<Vec<f64>> = directions
        .iter()
        .map(|s| {
            check_len("conjugacy_defect", w.dim(), s.len())?;
            w.apply(s)
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0_f64;
    for (i, s_i) in directions.iter().enumerate() {
        for w_j in &ws[i..] {
            let target = if std::ptr::eq(w_j, &ws[i]) { 1.0 } else { 0.0 };
            worst = worst.max((dot(s_i, w_j) - target).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySummary {
    pub total_variance: f64,
    pub per_coordinate: Vec<f64>,
}

pub fn uncertainty_summary(belief: &GaussianBelief) -> Result<UncertaintySummary> {
    let per_coordinate = belief.variances()?;
    Ok(UncertaintySummary {
        total_variance: per_coordinate.iter().sum(),
        per_coordinate,
    })
}

/// Fraction of coordinates with `|x*_i − mean_i| ≤ z·sqrt(var_i)`.
/// Negative variances from roundoff are clamped to zero.
pub fn coverage(mean: &[f64], variances: &[f64], truth: &[f64], z: f64) -> Result<f64> {
    check_len("coverage variances", mean.len(), variances.len())?;
    check_len("coverage truth", mean.len(), truth.len())?;
    let hits = mean
        .iter()
        .zip(variances)
        .zip(truth)
        .filter(|((m, v), t)| (*t - *m).abs() <= z * v.max(0.0).sqrt())
        .count();
    Ok(hits as f64 / mean.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionStep {
    pub m: usize,
    /// Per system: `‖x_joint,m[j] − x_j,m‖ / ‖x*_j‖`, comparing joint iteration
    /// `m` against independent iteration `min(m, last)`.
    pub mean_discrepancy: Vec<f64>,
    /// Largest off-diagonal block response `‖(Σ_m v_i)[k]‖ / ‖Σ₀ v_i‖`, `k ≠ i`,
    /// over one seeded probe per block.
    pub cross_block_covariance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub block_count: usize,
    pub block_dim: usize,
    pub per_iteration: Vec<ReductionStep>,
    /// Joint final mean vs direct solve, per system.
    pub joint_error: Vec<f64>,
    /// Independent final mean vs direct solve, per system.
    pub independent_error: Vec<f64>,
    /// Joint vs independent final means, per system.
    pub final_agreement: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm2(b);
    if denom > 0.0 {
        norm2(&diff) / denom
    } else {
        norm2(&diff)
    }
}

/// Runs the stacked solve under `BlockDiag[Σ₀, …, Σ₀]` next to `J`
/// independent solves with `Σ₀`, recording per-iteration discrepancies and
/// the final agreement with direct solutions.
pub fn reduction_study(family: &SystemFamily, within_cov: &SpdOperator, config: SolverConfig) -> Result<ReductionReport> {
    let j_count = family.len();
    if j_count < 2 {
        return Err(Error::invalid("reduction study needs at least two systems"));
    }
    let d = family.block_dim();
    check_len("reduction study prior", d, within_cov.dim())?;
    let stacked = stack(family)?;
    let truth: Vec<Vec<f64>> = family.systems().iter().map(direct_solve).collect::<Result<_>>()?;

    let mut independent = Vec::with_capacity(j_count);
    for sys in family.systems() {
        let mut st = SolverState::init(
            sys.clone(),
            GaussianBelief::zero_mean(within_cov.clone()),
            config.with_max_iterations(d),
        )?;
        let mut iterates = vec![st.belief().mean().to_vec()];
        while let NextDirection::Search(s) = st.next_direction()? {
            st.observe_and_update(&s)?;
            iterates.push(st.belief().mean().to_vec());
        }
        independent.push(iterates);
    }

    let joint_cov = SpdOperator::block_diagonal(vec![within_cov.clone(); j_count])?;
    let mut joint = SolverState::init(
        stacked.system().clone(),
        GaussianBelief::zero_mean(joint_cov.clone()),
        config.with_max_iterations(d * j_count),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x7ed0);
    let probes: Vec<Vec<f64>> = (0..j_count)
        .map(|blk| {
            let mut v = vec![0.0; d * j_count];
            for x in &mut v[stacked.block_range(blk)] {
                *x = StandardNormal.sample(&mut rng);
            }
            v
        })
        .collect();
    let prior_scale: Vec<f64> = probes
        .iter()
        .map(|p| joint_cov.apply(p).map(|v| norm2(&v)))
        .collect::<Result<_>>()?;

    let mut per_iteration = Vec::new();
    while let NextDirection::Search(s) = joint.next_direction()? {
        joint.observe_and_update(&s)?;
        let m = joint.iteration();
        let mean_discrepancy = (0..j_count)
            .map(|blk| {
                let ind = &independent[blk];
                let x_ind = &ind[m.min(ind.len() - 1)];
                let diff: Vec<f64> = joint.belief().mean()[stacked.block_range(blk)]
                    .iter()
                    .zip(x_ind)
                    .map(|(a, b)| a - b)
                    .collect();
                norm2(&diff) / norm2(&truth[blk]).max(f64::MIN_POSITIVE)
            })
            .collect();
        let mut cross = 0.0_f64;
        for (i, probe) in probes.iter().enumerate() {
            let out = joint.belief().apply_cov(probe)?;
            for k in (0..j_count).filter(|&k| k != i) {
                cross = cross.max(norm2(&out[stacked.block_range(k)]) / prior_scale[i]);
            }
        }
        per_iteration.push(ReductionStep {
            m,
            mean_discrepancy,
            cross_block_covariance: cross,
        });
    }

    let joint_mean = joint.belief().mean();
    let mut joint_error = Vec::with_capacity(j_count);
    let mut independent_error = Vec::with_capacity(j_count);
    let mut final_agreement = Vec::with_capacity(j_count);
    for blk in 0..j_count {
        let jm = &joint_mean[stacked.block_range(blk)];
        let im = independent[blk].last().expect("initial iterate is always stored");
        joint_error.push(rel(jm, &truth[blk]));
        independent_error.push(rel(im, &truth[blk]));
        final_agreement.push(rel(jm, im));
    }
    let passed = joint_error
        .iter()
        .chain(&independent_error)
        .all(|&e| e <= REDUCTION_TOLERANCE);
    Ok(ReductionReport {
        block_count: j_count,
        block_dim: d,
        per_iteration,
        joint_error,
        independent_error,
        final_agreement,
        tolerance: REDUCTION_TOLERANCE,
        passed,
    })
}
