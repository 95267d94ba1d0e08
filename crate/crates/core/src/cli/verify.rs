use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{emit, to_json, VerifyArgs, EXIT_OK, EXIT_VERIFY_FAILED};
use crate::bayescg::{LinearSystem, NextDirection, SolverConfig, SolverState};
use crate::diagnostics::{conjugacy_defect, reduction_study, ReductionReport};
use crate::error::{Error, Result};
use crate::linops::{norm2, SpdOperator};
use crate::multibcg::{kron_matvec, SeparableCovariance, SystemFamily};
use crate::oracle::{batch_posterior, direct_solve, MAX_DENSE_DIM};
use crate::priors::identity_prior;
use crate::problems::{gen_random_spd, gen_rhs};

const PROBES: usize = 5;

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    size: usize,
    measured: f64,
    tolerance: f64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reduction: Option<ReductionReport>,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    version: &'static str,
    seed: u64,
    sizes: Vec<usize>,
    tolerance_override: Option<f64>,
    checks: Vec<Check>,
    passed: bool,
}

fn check(name: &'static str, size: usize, measured: f64, tolerance: f64) -> Check {
    Check {
        name,
        size,
        measured,
        tolerance,
        passed: measured <= tolerance,
        reduction: None,
    }
}

fn rel(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / scale.max(f64::MIN_POSITIVE)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Oracle equivalence, exactness and conjugacy from one full run.
fn single_system_checks(d: usize, seed: u64, tol: impl Fn(f64) -> f64) -> Result<Vec<Check>> {
    let a = SpdOperator::dense(gen_random_spd(d, 100.0, seed)?)?;
    let system = LinearSystem::new(a, gen_rhs(d, seed.wrapping_add(1)))?;
    let prior = identity_prior(d, 1.0)?;
    let config = SolverConfig::default()
        .with_max_iterations(d)
        .with_residual_tolerance(1e-13);
    let mut state = SolverState::init(system.clone(), prior.clone(), config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let probes: Vec<Vec<f64>> = (0..PROBES).map(|_| random_vec(&mut rng, d)).collect();

    let mut equivalence = 0.0_f64;
    while let NextDirection::Search(s) = state.next_direction()? {
        state.observe_and_update(&s)?;
        let batch = batch_posterior(&system, &prior, state.directions())?;
        let mean = state.belief().mean();
        equivalence = equivalence.max(rel(mean, batch.mean(), norm2(batch.mean())));
        for p in &probes {
            let scale = norm2(&prior.apply_cov(p)?);
            equivalence = equivalence.max(rel(&state.belief().apply_cov(p)?, &batch.apply_cov(p)?, scale));
        }
    }
    let truth = direct_solve(&system)?;
    let exactness = rel(state.belief().mean(), &truth, norm2(&truth));
    let gram = state.gram().clone();
    let conjugacy = conjugacy_defect(state.directions(), &gram)?;
    Ok(vec![
        check("oracle_equivalence", d, equivalence, tol(1e-8)),
        check("exactness", d, exactness, tol(1e-8)),
        check("conjugacy", d, conjugacy, tol(1e-8)),
    ])
}

fn kronecker_check(d: usize, seed: u64, tol: f64) -> Result<Check> {
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4b52);
    for j in 1..=3 {
        let task = gen_random_spd(j, 10.0, seed.wrapping_add(j as u64))?;
        let within = gen_random_spd(d, 10.0, seed.wrapping_add(100 + j as u64))?;
        let dense = task.inner().kronecker(within.inner());
        let cov = SeparableCovariance::new(task, SpdOperator::dense(within)?)?;
        let v = random_vec(&mut rng, j * d);
        let expected = &dense * DVector::from_column_slice(&v);
        let got = kron_matvec(&cov, &v)?;
        worst = worst.max(rel(&got, expected.as_slice(), expected.norm()));
    }
    Ok(check("kronecker", d, worst, tol))
}

fn reduction_check(d: usize, seed: u64, tol: f64) -> Result<Check> {
    let systems = (0..2u64)
        .map(|k| {
            let s = seed.wrapping_add(7 * k + 3);
            let a = SpdOperator::dense(gen_random_spd(d, 50.0, s)?)?;
            LinearSystem::new(a, gen_rhs(d, s.wrapping_add(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let family = SystemFamily::new(systems)?;
    let config = SolverConfig::default().with_residual_tolerance(1e-14);
    let report = reduction_study(&family, &SpdOperator::identity(d), config)?;
    let measured = report
        .joint_error
        .iter()
        .chain(&report.independent_error)
        .fold(0.0_f64, |m, &e| m.max(e));
    let mut c = check("reduction", d, measured, tol);
    c.reduction = Some(report);
    Ok(c)
}

pub(super) fn run(args: &VerifyArgs) -> Result<i32> {
    if args.sizes.is_empty() {
        return Err(Error::invalid("--sizes must list at least one dimension"));
    }
    if let Some(&d) = args.sizes.iter().find(|&&d| d == 0 || d > MAX_DENSE_DIM) {
        return Err(Error::invalid(format!(
            "verify sizes must lie in 1..={MAX_DENSE_DIM}, got {d}"
        )));
    }
    if let Some(t) = args.tol_override {
        if !(t >= 0.0) {
            return Err(Error::invalid("--tol-override must be nonnegative"));
        }
    }
    let tol = |default: f64| args.tol_override.unwrap_or(default);
    let mut checks = Vec::new();
    for &d in &args.sizes {
        let seed = args.seed.wrapping_add(d as u64);
        checks.extend(single_system_checks(d, seed, tol)?);
        checks.push(kronecker_check(d, seed, tol(1e-12))?);
        checks.push(reduction_check(d, seed, tol(1e-8))?);
    }
    for c in checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "check failed: {} (size {}): measured {:e} > tolerance {:e}",
            c.name, c.size, c.measured, c.tolerance
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        version: crate::VERSION,
        seed: args.seed,
        sizes: args.sizes.clone(),
        tolerance_override: args.tol_override,
        checks,
        passed,
    };
    emit(args.out.as_deref(), &to_json(&report)?)?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
