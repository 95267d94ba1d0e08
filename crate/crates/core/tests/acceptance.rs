//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the log.
//! The process fails if any criterion fails, except those listed in
//! `KNOWN_UNATTAINABLE`, whose failure must instead match the documented
//! analysis (checked inside the criterion itself).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayescg::bayescg::{GaussianBelief, LinearSystem, NextDirection, SolverConfig, SolverState};
use bayescg::diagnostics::{conjugacy_defect, reduction_study};
use bayescg::linops::{dot, norm2, CsrMatrix, DenseMatrix, SpdOperator};
use bayescg::multibcg::{extract_marginal, kron_matvec, solve_multi, SeparableCovariance, SystemFamily};
use bayescg::oracle::{batch_posterior, direct_solve, reference_cg};
use bayescg::priors::{
    constant_task_correlation, custom_dense_prior, identity_prior, jacobi_prior, preconditioner_prior,
    task_correlation_matrix,
};
use bayescg::problems::matrix_market::{format_matrix_market, parse_matrix_market};
use bayescg::problems::{gen_mesh_stiffness, gen_random_spd, gen_related_family, gen_rhs, read_matrix_market};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<Report, String>;
type Criterion = (&'static str, fn() -> Outcome);

struct Report {
    passed: bool,
    detail: String,
}

const KNOWN_UNATTAINABLE: &[&str] = &["one_step_collapse"];

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / scale.max(f64::MIN_POSITIVE)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn spd(d: usize, cond: f64, seed: u64) -> SpdOperator {
    SpdOperator::dense(gen_random_spd(d, cond, seed).unwrap()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const DIMS: [usize; 4] = [2, 4, 8, 16];

/// Problem `k` of the 20-member ensemble: dimension, condition, prior.
fn ensemble_member(k: u64) -> (LinearSystem, GaussianBelief, &'static str) {
    let d = DIMS[k as usize % 4];
    let cond = [10.0, 1e2, 1e3][k as usize % 3];
    let a = spd(d, cond, 1000 + k);
    let system = LinearSystem::new(a.clone(), gen_rhs(d, 2000 + k)).unwrap();
    let (prior, name) = match k % 3 {
        0 => (identity_prior(d, 1.0).unwrap(), "identity"),
        1 => (jacobi_prior(&a).unwrap(), "jacobi"),
        _ => (custom_dense_prior(gen_random_spd(d, 10.0, 3000 + k).unwrap()).unwrap(), "dense"),
    };
    (system, prior, name)
}

fn oracle_equivalence() -> Outcome {
    let mut worst_mean = 0.0_f64;
    let mut worst_cov = 0.0_f64;
    for k in 0..20 {
        let (system, prior, _) = ensemble_member(k);
        let d = system.dim();
        let cfg = SolverConfig::default().with_residual_tolerance(1e-13);
        let mut st = SolverState::init(system.clone(), prior.clone(), cfg).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let probes: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, d)).collect();
        while let NextDirection::Search(s) = st.next_direction().map_err(err)? {
            st.observe_and_update(&s).map_err(err)?;
            let batch = batch_posterior(&system, &prior, st.directions()).map_err(err)?;
            worst_mean = worst_mean.max(rel(st.belief().mean(), batch.mean(), norm2(batch.mean())));
            for p in &probes {
                let scale = norm2(&prior.apply_cov(p).map_err(err)?);
                let inc = st.belief().apply_cov(p).map_err(err)?;
                let bat = batch.apply_cov(p).map_err(err)?;
                worst_cov = worst_cov.max(rel(&inc, &bat, scale));
            }
        }
    }
    Ok(Report {
        passed: worst_mean <= 1e-8 && worst_cov <= 1e-8,
        detail: format!("mean {worst_mean:.2e}, covariance probes {worst_cov:.2e} (tol 1e-8)"),
    })
}

fn exactness() -> Outcome {
    let mut worst_single = 0.0_f64;
    for k in 0..20 {
        let (system, prior, _) = ensemble_member(k);
        let d = system.dim();
        let truth = direct_solve(&system).map_err(err)?;
        let cfg = SolverConfig::default()
            .with_max_iterations(d)
            .with_residual_tolerance(1e-15);
        let sol = bayescg::bayescg::solve(system, prior, cfg).map_err(err)?;
        worst_single = worst_single.max(rel(sol.belief.mean(), &truth, norm2(&truth)));
    }
    let mut worst_joint = 0.0_f64;
    let mut runs = 0;
    for d in [2usize, 4, 8, 16] {
        for j in 1..=4usize {
            let seed = (d * 10 + j) as u64;
            let systems = (0..j)
                .map(|i| LinearSystem::new(spd(d, 100.0, seed * 7 + i as u64), gen_rhs(d, seed * 13 + i as u64)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            let family = SystemFamily::new(systems).map_err(err)?;
            let task = constant_task_correlation(j, 0.6).map_err(err)?.matrix;
            let cov = SeparableCovariance::new(task, SpdOperator::identity(d))
                .and_then(|c| c.to_operator())
                .map_err(err)?;
            let cfg = SolverConfig::default()
                .with_max_iterations(d * j)
                .with_residual_tolerance(1e-15);
            let (stacked, sol) = solve_multi(&family, vec![0.0; d * j], cov, cfg).map_err(err)?;
            for (i, sys) in family.systems().iter().enumerate() {
                let truth = direct_solve(sys).map_err(err)?;
                let got = &sol.belief.mean()[stacked.block_range(i)];
                worst_joint = worst_joint.max(rel(got, &truth, norm2(&truth)));
            }
            runs += 1;
        }
    }
    Ok(Report {
        passed: worst_single <= 1e-8 && worst_joint <= 1e-8,
        detail: format!(
            "single {worst_single:.2e} over 20 problems, joint {worst_joint:.2e} over {runs} families (tol 1e-8)"
        ),
    })
}

fn conjugacy() -> Outcome {
    let mut worst_defect = 0.0_f64;
    let mut worst_orth = 0.0_f64;
    for (i, d) in [8usize, 16, 32, 64].into_iter().enumerate() {
        for seed in 0..3u64 {
            let a = spd(d, 1e3, 40 + 10 * i as u64 + seed);
            let system = LinearSystem::new(a, gen_rhs(d, 90 + seed)).map_err(err)?;
            let b_norm = norm2(system.rhs());
            let prior = identity_prior(d, 1.0).map_err(err)?;
            let cfg = SolverConfig::default().with_residual_tolerance(1e-12);
            let mut st = SolverState::init(system, prior, cfg).map_err(err)?;
            while let NextDirection::Search(s) = st.next_direction().map_err(err)? {
                st.observe_and_update(&s).map_err(err)?;
                for s_i in st.directions() {
                    worst_orth = worst_orth.max(dot(s_i, st.residual()).abs() / b_norm);
                }
            }
            let gram = st.gram().clone();
            worst_defect = worst_defect.max(conjugacy_defect(st.directions(), &gram).map_err(err)?);
        }
    }
    Ok(Report {
        passed: worst_defect <= 1e-8 && worst_orth <= 1e-8,
        detail: format!("defect {worst_defect:.2e}, |s_i^T r_m|/|b| {worst_orth:.2e} (tol 1e-8)"),
    })
}

fn kronecker() -> Outcome {
    let mut worst = 0.0_f64;
    for j in 1..=3usize {
        for d in [2usize, 5] {
            for seed in 0..10u64 {
                let task = gen_random_spd(j, 20.0, seed * 3 + j as u64).map_err(err)?;
                let within = gen_random_spd(d, 20.0, seed * 5 + d as u64).map_err(err)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_vec(&mut rng, j * d);
                let mut expected = vec![0.0; j * d];
                for (r, out) in expected.iter_mut().enumerate() {
                    for (c, vc) in v.iter().enumerate() {
                        *out += task.get(r / d, c / d) * within.get(r % d, c % d) * vc;
                    }
                }
                let cov = SeparableCovariance::new(task, SpdOperator::dense(within).map_err(err)?).map_err(err)?;
                let got = kron_matvec(&cov, &v).map_err(err)?;
                worst = worst.max(rel(&got, &expected, norm2(&expected)));
            }
        }
    }
    Ok(Report {
        passed: worst <= 1e-12,
        detail: format!("max relative error {worst:.2e} over 60 cases (tol 1e-12)"),
    })
}

fn block_diagonal_reduction() -> Outcome {
    let mut worst = 0.0_f64;
    let mut curves = Vec::new();
    for (d, j) in [(4usize, 2usize), (8, 2), (6, 3), (16, 4)] {
        let systems = (0..j)
            .map(|i| LinearSystem::new(spd(d, 100.0, (d * 31 + i) as u64), gen_rhs(d, (d * 37 + i) as u64)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let family = SystemFamily::new(systems).map_err(err)?;
        let cfg = SolverConfig::default().with_residual_tolerance(1e-15);
        let report = reduction_study(&family, &SpdOperator::identity(d), cfg).map_err(err)?;
        for e in report.joint_error.iter().chain(&report.independent_error) {
            worst = worst.max(*e);
        }
        let curve: Vec<String> = report
            .per_iteration
            .iter()
            .map(|s| format!("{:.1e}", s.mean_discrepancy.iter().cloned().fold(0.0, f64::max)))
            .collect();
        curves.push(format!("    d={d} J={j} per-iteration mean discrepancy: {}", curve.join(" ")));
    }
    for c in &curves {
        println!("{c}");
    }
    Ok(Report {
        passed: worst <= 1e-8,
        detail: format!("final error vs direct solves {worst:.2e} (tol 1e-8)"),
    })
}

fn iterates(family: &SystemFamily, cov: &SpdOperator) -> Result<Vec<Vec<f64>>, String> {
    let stacked = bayescg::multibcg::stack(family).map_err(err)?;
    let n = stacked.system().dim();
    let cfg = SolverConfig::default()
        .with_max_iterations(n)
        .with_residual_tolerance(1e-15);
    let mut st = SolverState::init(stacked.system().clone(), GaussianBelief::zero_mean(cov.clone()), cfg)
        .map_err(err)?;
    let mut out = Vec::new();
    while let NextDirection::Search(s) = st.next_direction().map_err(err)? {
        st.observe_and_update(&s).map_err(err)?;
        let m = extract_marginal(st.belief(), &stacked, 0).map_err(err)?;
        out.push(m.mean().to_vec());
    }
    Ok(out)
}

fn cross_system_dependence() -> Outcome {
    let d = 6;
    let base = spd(d, 50.0, 77);
    let thetas = [0.1, 0.2];
    let family = gen_related_family(&base, &thetas, 78, 0.1).map_err(err)?;
    let mut systems = family.systems().to_vec();
    let b2: Vec<f64> = systems[1].rhs().iter().map(|x| 1.01 * x).collect();
    systems[1] = LinearSystem::new(systems[1].operator().clone(), b2).map_err(err)?;
    let perturbed = SystemFamily::new(systems).map_err(err)?;

    let coupled_task = task_correlation_matrix(&thetas, 0.1).map_err(err)?.matrix;
    let b12 = coupled_task.get(0, 1);
    let coupled = SpdOperator::kronecker(coupled_task, SpdOperator::identity(d)).map_err(err)?;
    let a = iterates(&family, &coupled)?;
    let b = iterates(&perturbed, &coupled)?;
    let last = a.len().min(b.len());
    let change = (0..last.saturating_sub(1))
        .map(|m| rel(&a[m], &b[m], norm2(&a[m])))
        .fold(0.0_f64, f64::max);

    let diagonal = SpdOperator::kronecker(DenseMatrix::identity(2), SpdOperator::identity(d)).map_err(err)?;
    let a = iterates(&family, &diagonal)?;
    let b = iterates(&perturbed, &diagonal)?;
    let fa = a.last().ok_or("no iterations")?;
    let fb = b.last().ok_or("no iterations")?;
    let invariance = rel(fa, fb, norm2(fa));

    Ok(Report {
        passed: b12 >= 0.5 && change >= 1e-6 && invariance <= 1e-10,
        detail: format!(
            "B12 = {b12:.3}, largest intermediate change {change:.2e} (need >= 1e-6), \
             diagonal-B final change {invariance:.2e} (tol 1e-10)"
        ),
    })
}

/// Fails by construction: with `Σ₀ = A⁻¹` the Gram operator is `A` and the
/// first step is a steepest-descent step. The criterion's failure is only
/// accepted if the measured one-step iterate matches steepest descent and a
/// `Σ₀ = A⁻²` prior does collapse in one step.
fn one_step_collapse() -> Outcome {
    let mut worst = 0.0_f64;
    let mut sd_mismatch = 0.0_f64;
    let mut a2_worst = 0.0_f64;
    for seed in 0..10u64 {
        let d = DIMS[seed as usize % 4];
        let a = spd(d, 100.0, 500 + seed);
        let system = LinearSystem::new(a.clone(), gen_rhs(d, 600 + seed)).map_err(err)?;
        let b = system.rhs().to_vec();
        let cfg = SolverConfig::default().with_max_iterations(1);
        let sol = bayescg::bayescg::solve(system.clone(), preconditioner_prior(&a).map_err(err)?, cfg)
            .map_err(err)?;
        let r = system.residual(sol.belief.mean()).map_err(err)?;
        worst = worst.max(norm2(&r) / norm2(&b));

        let ab = a.apply(&b).map_err(err)?;
        let alpha = dot(&b, &b) / dot(&b, &ab);
        let sd: Vec<f64> = b.iter().map(|x| alpha * x).collect();
        sd_mismatch = sd_mismatch.max(rel(sol.belief.mean(), &sd, norm2(&sd)));

        let inv = SpdOperator::cholesky_inverse(&a).map_err(err)?;
        let inv2 = SpdOperator::sandwich(&inv, &SpdOperator::identity(d)).map_err(err)?;
        let sol = bayescg::bayescg::solve(system.clone(), GaussianBelief::zero_mean(inv2), cfg).map_err(err)?;
        let r = system.residual(sol.belief.mean()).map_err(err)?;
        a2_worst = a2_worst.max(norm2(&r) / norm2(&b));
    }
    let passed = worst <= 1e-8;
    let analysis_holds = sd_mismatch <= 1e-10 && a2_worst <= 1e-8;
    if !passed && !analysis_holds {
        return Err(format!(
            "failure does not match analysis: steepest-descent mismatch {sd_mismatch:.2e}, A^-2 residual {a2_worst:.2e}"
        ));
    }
    Ok(Report {
        passed,
        detail: format!(
            "one-step relative residual {worst:.2e} (tol 1e-8); iterate equals steepest descent to {sd_mismatch:.1e}; \
             Sigma0 = A^-2 gives {a2_worst:.1e}"
        ),
    })
}

/// Exact-arithmetic CG iterates: Galerkin solutions on a fully
/// reorthogonalized Lanczos basis of `K_m(A, b)`.
fn lanczos_iterates(a: &DMatrix<f64>, b: &[f64], m_max: usize) -> Vec<Vec<f64>> {
    let bv = DVector::from_column_slice(b);
    let mut basis = vec![&bv / bv.norm()];
    let mut out = vec![vec![0.0; b.len()]];
    for m in 1..=m_max {
        let q = DMatrix::from_columns(&basis);
        let t = q.transpose() * a * &q;
        let y = t.cholesky().expect("projected matrix is SPD").solve(&(q.transpose() * &bv));
        out.push((&q * y).as_slice().to_vec());
        let mut w = a * &basis[m - 1];
        for _ in 0..2 {
            for qi in &basis {
                let c = qi.dot(&w);
                w -= qi * c;
            }
        }
        let nw = w.norm();
        if m == m_max || nw <= 1e-14 * bv.norm() {
            break;
        }
        basis.push(w / nw);
    }
    out
}

/// Largest per-iterate differences: BayesCG vs textbook CG, and each vs
/// the Lanczos oracle.
fn cg_comparison(cond: f64, seeds: std::ops::Range<u64>) -> Result<[f64; 3], String> {
    let mut worst = [0.0_f64; 3];
    for seed in seeds {
        let d = DIMS[seed as usize % 4];
        let a = gen_random_spd(d, cond, 700 + seed).map_err(err)?;
        let dense = a.inner().clone();
        let inverse = dense.clone().try_inverse().ok_or("dense inverse failed")?;
        let inverse = DenseMatrix::from_nalgebra(inverse).map_err(err)?.symmetrized();
        let system = LinearSystem::new(SpdOperator::dense(a).map_err(err)?, gen_rhs(d, 800 + seed)).map_err(err)?;
        let prior = custom_dense_prior(inverse).map_err(err)?;
        let cfg = SolverConfig::default().with_residual_tolerance(1e-14);
        let mut st = SolverState::init(system.clone(), prior, cfg).map_err(err)?;
        let cg = reference_cg(&system, &vec![0.0; d], d).map_err(err)?;
        let exact = lanczos_iterates(&dense, system.rhs(), d);
        while let NextDirection::Search(s) = st.next_direction().map_err(err)? {
            st.observe_and_update(&s).map_err(err)?;
            let m = st.iteration();
            let mean = st.belief().mean();
            if let Some(x) = cg.get(m) {
                worst[0] = worst[0].max(rel(mean, x, norm2(x)));
                if let Some(e) = exact.get(m) {
                    worst[2] = worst[2].max(rel(x, e, norm2(e)));
                }
            }
            if let Some(e) = exact.get(m) {
                worst[1] = worst[1].max(rel(mean, e, norm2(e)));
            }
        }
    }
    Ok(worst)
}

/// Gated at condition numbers where textbook CG itself stays accurate; at
/// condition 100 the textbook recurrence drifts from exact arithmetic and
/// only the Lanczos comparison is meaningful, so it is reported alongside.
fn classical_cg_agreement() -> Outcome {
    let mut gate = 0.0_f64;
    for cond in [10.0, 30.0] {
        gate = gate.max(cg_comparison(cond, 0..12)?[0]);
    }
    let [vs_cg, vs_exact, cg_drift] = cg_comparison(100.0, 0..12)?;
    println!(
        "    cond 100: BayesCG vs textbook CG {vs_cg:.1e}, BayesCG vs Lanczos {vs_exact:.1e}, \
         textbook CG vs Lanczos {cg_drift:.1e}"
    );
    Ok(Report {
        passed: gate <= 1e-6 && vs_exact <= 1e-10,
        detail: format!(
            "max per-iterate difference {gate:.2e} at cond <= 30, d <= 16 (tol 1e-6); \
             vs exact-arithmetic iterates at cond 100 {vs_exact:.1e}"
        ),
    })
}

fn matrix_market_io() -> Outcome {
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    let dir = tempfile::tempdir().map_err(err)?;
    let matrices = [
        CsrMatrix::from_dense(&gen_random_spd(10, 1e3, 5).map_err(err)?),
        gen_mesh_stiffness(5).map_err(err)?,
    ];
    for (i, m) in matrices.iter().enumerate() {
        let path = dir.path().join(format!("m{i}.mtx"));
        bayescg::problems::write_matrix_market(&path, m).map_err(err)?;
        let back = read_matrix_market(&path).map_err(err)?;
        if back.rows() != m.rows() || back.cols() != m.cols() {
            return Ok(Report {
                passed: false,
                detail: "round-trip changed the shape".into(),
            });
        }
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                checked += 1;
                if back.get(r, c).to_bits() != m.get(r, c).to_bits() {
                    mismatches += 1;
                }
            }
        }
        let mut bytes = Vec::new();
        format_matrix_market(&back, &mut bytes).map_err(err)?;
        let again = parse_matrix_market(bytes.as_slice()).map_err(err)?;
        if again != back {
            mismatches += 1;
        }
    }
    let fixture = read_matrix_market(fixture("symmetric_2x2.mtx")).map_err(err)?;
    let expected = [[2.0, 1.0], [1.0, 3.0]];
    let fixture_ok = fixture.rows() == 2
        && fixture.nnz() == 4
        && (0..2).all(|r| (0..2).all(|c| fixture.get(r, c) == expected[r][c]));
    Ok(Report {
        passed: mismatches == 0 && fixture_ok,
        detail: format!(
            "{mismatches} value mismatches over {checked} entries; 2x2 symmetric fixture expanded {}",
            if fixture_ok { "correctly" } else { "incorrectly" }
        ),
    })
}

fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["bayescg"];
    full.extend_from_slice(args);
    bayescg::cli::main_with_args(full)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("solve", vec!["solve", "--random", "12", "--seed", "9", "--prior", "jacobi"]),
        ("solve_csv", vec!["solve", "--random", "12", "--seed", "9", "--format", "csv"]),
        (
            "solve_multi",
            vec!["solve-multi", "--random", "6", "--systems", "3", "--prior", "separable", "--rho", "0.7", "--seed", "4"],
        ),
        (
            "solve_multi_kernel",
            vec![
                "solve-multi", "--random", "5", "--thetas", "0.1,0.3", "--prior", "separable", "--rho-scale", "0.2",
            ],
        ),
        ("bench", vec!["bench", "--ensemble", "2", "--dim", "4", "--seed", "11"]),
        ("bench_json", vec!["bench", "--ensemble", "1", "--dim", "3", "--format", "json"]),
    ];
    let mut differing = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let path = dir.path().join(format!("{name}-{rep}.out"));
            let p = path.to_str().ok_or("non-utf8 temp path")?;
            let mut a = args.clone();
            a.extend_from_slice(&["--out", p]);
            let code = run_cli(&a);
            if code != 0 {
                return Err(format!("{name} exited with {code}"));
            }
            outputs.push(std::fs::read(&path).map_err(err)?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            differing.push(*name);
        }
    }
    Ok(Report {
        passed: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} commands byte-identical across reruns", runs.len())
        } else {
            format!("outputs differ for {differing:?}")
        },
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle_equivalence", oracle_equivalence),
        ("exactness", exactness),
        ("conjugacy", conjugacy),
        ("kronecker", kronecker),
        ("block_diagonal_reduction", block_diagonal_reduction),
        ("cross_system_dependence", cross_system_dependence),
        ("one_step_collapse", one_step_collapse),
        ("classical_cg_agreement", classical_cg_agreement),
        ("matrix_market_io", matrix_market_io),
        ("determinism", determinism),
    ];
    let mut unexpected = 0;
    for (name, f) in criteria {
        let known = KNOWN_UNATTAINABLE.contains(&name);
        match f() {
            Ok(r) if r.passed => println!("PASS {name}: {}", r.detail),
            Ok(r) if known => println!("FAIL {name} (known, unattainable as stated): {}", r.detail),
            Ok(r) => {
                unexpected += 1;
                println!("FAIL {name}: {}", r.detail);
            }
            Err(e) => {
                unexpected += 1;
                println!("FAIL {name}: error: {e}");
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}
