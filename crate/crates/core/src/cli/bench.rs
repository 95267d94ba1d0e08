use serde::Serialize;

use super::{default_thetas, emit, to_json, BenchArgs, Format, EXIT_OK};
use crate::bayescg::{GaussianBelief, LinearSystem, NextDirection, SolverConfig, SolverState};
use crate::diagnostics::coverage;
use crate::error::{Error, Result};
use crate::linops::{norm2, SpdOperator};
use crate::multibcg::{stack, StackedSystem, SystemFamily};
use crate::oracle::direct_solve;
use crate::priors::{PriorSpec, TaskSpec, WithinPrior};
use crate::problems::{gen_random_spd, gen_related_family};

const COVERAGE_Z: f64 = 1.96;

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    seed: u64,
    #[serde(rename = "J")]
    j: usize,
    d: usize,
    rho: f64,
    iteration: usize,
    joint_residuals: String,
    independent_residuals: String,
    joint_coverage: f64,
    independent_coverage: f64,
}

#[derive(Debug, Serialize)]
struct BenchConfig {
    ensemble: usize,
    dim: usize,
    systems: usize,
    cond: f64,
    rho: f64,
    thetas: Vec<f64>,
    rhs_perturbation: f64,
    gamma: f64,
    tol: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    version: &'static str,
    seed: u64,
    config: BenchConfig,
    rows: Vec<BenchRow>,
}

/// Relative residual per system and pooled coverage at one iteration.
#[derive(Debug, Clone)]
struct Snapshot {
    residuals: Vec<f64>,
    coverage: f64,
}

fn relative_residual(system: &LinearSystem, x: &[f64]) -> Result<f64> {
    Ok(norm2(&system.residual(x)?) / norm2(system.rhs()).max(f64::MIN_POSITIVE))
}

fn joint_snapshot(
    belief: &GaussianBelief,
    stacked: &StackedSystem,
    family: &SystemFamily,
    truth: &[f64],
) -> Result<Snapshot> {
    let mean = belief.mean();
    let residuals = family
        .systems()
        .iter()
        .enumerate()
        .map(|(j, sys)| relative_residual(sys, &mean[stacked.block_range(j)]))
        .collect::<Result<_>>()?;
    Ok(Snapshot {
        residuals,
        coverage: coverage(mean, &belief.variances()?, truth, COVERAGE_Z)?,
    })
}

/// Runs a solver to termination, returning the belief after every step
/// (index 0 is the prior).
fn beliefs(mut state: SolverState) -> Result<Vec<GaussianBelief>> {
    let mut out = vec![state.belief().clone()];
    while let NextDirection::Search(s) = state.next_direction()? {
        state.observe_and_update(&s)?;
        out.push(state.belief().clone());
    }
    Ok(out)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";")
}

fn run_one(args: &BenchArgs, thetas: &[f64], seed: u64) -> Result<Vec<BenchRow>> {
    let d = args.dim;
    let j_count = thetas.len();
    let base = SpdOperator::dense(gen_random_spd(d, args.cond, seed)?)?;
    let family = gen_related_family(&base, thetas, seed.wrapping_add(1), args.rhs_perturbation)?;
    let truth: Vec<Vec<f64>> = family.systems().iter().map(direct_solve).collect::<Result<_>>()?;
    let stacked_truth: Vec<f64> = truth.concat();
    let config = SolverConfig::default().with_residual_tolerance(args.tol);

    let within = WithinPrior::IdentityScaled { gamma: args.gamma };
    let spec = PriorSpec::Separable {
        within,
        task: TaskSpec::Constant { rho: args.rho },
    };
    let matrices: Vec<SpdOperator> = family.systems().iter().map(|s| s.operator().clone()).collect();
    let (cov, _) = spec.joint_covariance(&matrices, 0)?;
    let stacked = stack(&family)?;
    let joint_state = SolverState::init(
        stacked.system().clone(),
        GaussianBelief::zero_mean(cov),
        config.with_max_iterations(d * j_count),
    )?;
    let joint = beliefs(joint_state)?
        .iter()
        .map(|b| joint_snapshot(b, &stacked, &family, &stacked_truth))
        .collect::<Result<Vec<_>>>()?;

    let independent = family
        .systems()
        .iter()
        .map(|sys| {
            let prior = GaussianBelief::zero_mean(within.covariance(sys.operator())?);
            beliefs(SolverState::init(sys.clone(), prior, config.with_max_iterations(d))?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(d * j_count);
    for m in 1..=d * j_count {
        let jt = &joint[m.min(joint.len() - 1)];
        let mut residuals = Vec::with_capacity(j_count);
        let mut means = Vec::with_capacity(d * j_count);
        let mut variances = Vec::with_capacity(d * j_count);
        for (sys, run) in family.systems().iter().zip(&independent) {
            let b = &run[m.min(run.len() - 1)];
            residuals.push(relative_residual(sys, b.mean())?);
            means.extend_from_slice(b.mean());
            variances.extend(b.variances()?);
        }
        rows.push(BenchRow {
            seed,
            j: j_count,
            d,
            rho: args.rho,
            iteration: m,
            joint_residuals: join(&jt.residuals),
            independent_residuals: join(&residuals),
            joint_coverage: jt.coverage,
            independent_coverage: coverage(&means, &variances, &stacked_truth, COVERAGE_Z)?,
        });
    }
    Ok(rows)
}

pub(super) fn run(args: &BenchArgs) -> Result<i32> {
    if args.ensemble == 0 {
        return Err(Error::invalid("--ensemble must be at least 1"));
    }
    if args.dim == 0 {
        return Err(Error::invalid("--dim must be at least 1"));
    }
    let thetas = match &args.thetas {
        Some(t) if t.len() != args.systems => {
            return Err(Error::invalid(format!(
                "--systems {} disagrees with {} thetas",
                args.systems,
                t.len()
            )))
        }
        Some(t) => t.clone(),
        None => default_thetas(args.systems),
    };
    let seed = args.seed;
    let mut rows = Vec::new();
    for k in 0..args.ensemble as u64 {
        rows.extend(run_one(args, &thetas, seed.wrapping_add(k))?);
    }
    let bytes = match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(super::csv_error)?;
            }
            w.into_inner().map_err(|e| Error::invalid(e.to_string()))?
        }
        Format::Json => to_json(&BenchReport {
            version: crate::VERSION,
            seed,
            config: BenchConfig {
                ensemble: args.ensemble,
                dim: args.dim,
                systems: args.systems,
                cond: args.cond,
                rho: args.rho,
                thetas,
                rhs_perturbation: args.rhs_perturbation,
                gamma: args.gamma,
                tol: args.tol,
            },
            rows,
        })?,
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}
