//! Command-line front end.
//!
//! Exit statuses: 0 converged (or success), 1 usage or I/O error,
//! 2 iteration limit reached, 3 breakdown without convergence,
//! 4 a `verify` check failed.

mod bench;
mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bayescg::{solve, GaussianBelief, IterationRecord, LinearSystem, SolverConfig, Termination};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linops::{CsrMatrix, SpdOperator};
use crate::multibcg::{extract_marginal, solve_multi, SystemFamily};
use crate::priors::{PriorSpec, TaskSpec, WithinPrior};
use crate::problems::matrix_market::{format_matrix_market, format_vector};
use crate::problems::{
    gen_mesh_stiffness, gen_random_spd, gen_related_family, gen_rhs, read_matrix_market, read_vector, Provenance,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MAX_ITERATIONS: i32 = 2;
pub const EXIT_BREAKDOWN: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bayescg", version, about = "Bayesian conjugate gradient for SPD linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a single system.
    Solve(SolveArgs),
    /// Solve J related systems jointly.
    SolveMulti(MultiArgs),
    /// Write a generated matrix or right-hand side in Matrix Market format.
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Run the oracle, conjugacy, exactness, Kronecker and reduction checks.
    Verify(VerifyArgs),
    /// Compare joint and independent solves over seeded ensembles.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Matrix Market matrix file; repeat once per system.
    #[arg(long = "matrix", value_name = "PATH")]
    matrices: Vec<PathBuf>,
    /// Right-hand side (one-column array file), paired with `--matrix` by position.
    #[arg(long = "rhs", value_name = "PATH")]
    rhs: Vec<PathBuf>,
    /// Generate a seeded random SPD problem of this dimension instead of reading files.
    #[arg(long, value_name = "D")]
    random: Option<usize>,
    /// Condition number target for `--random`.
    #[arg(long, default_value_t = 100.0)]
    cond: f64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Defaults to the (stacked) system dimension.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Use the plain two-term recurrence.
    #[arg(long)]
    no_reorth: bool,
}

impl SolverArgs {
    fn config(&self, dim: usize) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            max_iterations: Some(self.max_iters.unwrap_or(dim)),
            residual_tolerance: self.tol,
            reorthogonalize: !self.no_reorth,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file, written atomically. Standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PriorKind {
    Identity,
    Jacobi,
    Precond,
    Separable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WithinKind {
    Identity,
    Jacobi,
    Precond,
}

fn within_prior(kind: WithinKind, gamma: f64) -> WithinPrior {
    match kind {
        WithinKind::Identity => WithinPrior::IdentityScaled { gamma },
        WithinKind::Jacobi => WithinPrior::Jacobi,
        WithinKind::Precond => WithinPrior::Preconditioner,
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `precond` uses the system matrix itself, giving `Σ₀ = A⁻¹`.
    #[arg(long, value_enum, default_value_t = PriorKind::Identity)]
    prior: PriorKind,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct MultiArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of systems for `--random` when `--thetas` is not given.
    #[arg(long, value_name = "J")]
    systems: Option<usize>,
    /// Per-system parameters: shifts for `--random` families and kernel inputs for `--rho-scale`.
    #[arg(long, value_delimiter = ',', value_name = "CSV")]
    thetas: Option<Vec<f64>>,
    /// Right-hand side perturbation for `--random` families.
    #[arg(long, default_value_t = 0.1)]
    rhs_perturbation: f64,
    /// Non-separable kinds give a block-diagonal joint prior.
    #[arg(long, value_enum, default_value_t = PriorKind::Identity)]
    prior: PriorKind,
    /// Within-system family for `--prior separable`, built from the first system.
    #[arg(long, value_enum, default_value_t = WithinKind::Identity)]
    within: WithinKind,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Constant task correlation.
    #[arg(long)]
    rho: Option<f64>,
    /// Length scale of the squared-exponential task kernel over `--thetas`.
    #[arg(long)]
    rho_scale: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Subcommand)]
enum GenerateCommand {
    /// P1 Poisson stiffness matrix on an n×n triangulated grid.
    Mesh {
        #[arg(long)]
        n: usize,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Random SPD matrix with a target condition number.
    Spd {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 100.0)]
        cond: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Standard normal right-hand side.
    Rhs {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    sizes: Vec<usize>,
    /// Replace every check tolerance.
    #[arg(long)]
    tol_override: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Number of seeded runs.
    #[arg(long, default_value_t = 3)]
    ensemble: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    systems: usize,
    #[arg(long, default_value_t = 100.0)]
    cond: f64,
    /// Constant task correlation of the joint prior.
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Shifts of the related family; defaults to 0.1, 0.2, ….
    #[arg(long, value_delimiter = ',', value_name = "CSV")]
    thetas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    rhs_perturbation: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Runs the CLI on `args` (program name first) and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::SolveMulti(a) => cmd_solve_multi(&a),
        Command::Generate(g) => cmd_generate(&g),
        Command::Verify(a) => verify::run(&a),
        Command::Bench(a) => bench::run(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn exit_status(t: Option<Termination>) -> i32 {
    match t {
        Some(Termination::Converged) => EXIT_OK,
        Some(Termination::MaxIterations) => EXIT_MAX_ITERATIONS,
        Some(Termination::Breakdown) => EXIT_BREAKDOWN,
        None => EXIT_USAGE,
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("csv output: {e}"))
}

fn trace_csv(records: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    if records.is_empty() {
        w.write_record(["m", "residual_norm", "direction_norm", "y", "conjugacy_defect"])
            .map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn read_system(matrix: &Path, rhs: &Path) -> Result<LinearSystem> {
    let a = SpdOperator::sparse(read_matrix_market(matrix)?)?;
    let b = read_vector(rhs)?;
    LinearSystem::new(a, b)
}

fn read_systems(input: &InputArgs) -> Result<(Vec<LinearSystem>, Provenance)> {
    if input.matrices.len() != input.rhs.len() {
        return Err(Error::invalid(format!(
            "--matrix and --rhs must be paired: got {} matrices and {} right-hand sides",
            input.matrices.len(),
            input.rhs.len()
        )));
    }
    let systems = input
        .matrices
        .iter()
        .zip(&input.rhs)
        .map(|(m, r)| read_system(m, r))
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance::Files {
        matrices: path_strings(&input.matrices),
        rhs: path_strings(&input.rhs),
    };
    Ok((systems, provenance))
}

fn check_single_source(input: &InputArgs) -> Result<()> {
    match (input.random.is_some(), input.matrices.is_empty() && input.rhs.is_empty()) {
        (true, false) => Err(Error::invalid("use either --random or --matrix/--rhs, not both")),
        (false, true) => Err(Error::invalid("no input: give --matrix/--rhs or --random")),
        _ => Ok(()),
    }
}

fn random_system(d: usize, cond: f64, seed: u64) -> Result<LinearSystem> {
    let a = SpdOperator::dense(gen_random_spd(d, cond, seed)?)?;
    LinearSystem::new(a, gen_rhs(d, seed.wrapping_add(1)))
}

#[derive(Debug, Serialize)]
struct RunConfig<P: Serialize> {
    command: &'static str,
    input: Provenance,
    prior: P,
    solver: SolverConfig,
    format: Format,
}

#[derive(Debug, Serialize)]
struct Posterior {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl Posterior {
    fn of(belief: &GaussianBelief) -> Result<Self> {
        Ok(Posterior {
            mean: belief.mean().to_vec(),
            variance: belief.variances()?,
        })
    }
}

#[derive(Debug, Serialize)]
struct Marginal {
    system: usize,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SolveReport<P: Serialize> {
    version: &'static str,
    seed: u64,
    config: RunConfig<P>,
    termination: Option<Termination>,
    iterations: Vec<IterationRecord>,
    posterior: Posterior,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_jitter_applied: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    marginals: Option<Vec<Marginal>>,
}

fn write_report<P: Serialize>(report: &SolveReport<P>, output: &OutputArgs) -> Result<i32> {
    let bytes = match output.format {
        Format::Json => to_json(report)?,
        Format::Csv => trace_csv(&report.iterations)?,
    };
    emit(output.out.as_deref(), &bytes)?;
    if let Some(t @ (Termination::MaxIterations | Termination::Breakdown)) = report.termination {
        eprintln!("solver stopped without converging: {t:?}");
    }
    Ok(exit_status(report.termination))
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    check_single_source(&args.input)?;
    let seed = args.output.seed;
    let (system, input) = match args.input.random {
        Some(d) => (
            random_system(d, args.input.cond, seed)?,
            Provenance::Generator {
                name: "random_spd".into(),
                seed,
                parameters: json!({ "dim": d, "cond": args.input.cond }),
            },
        ),
        None => {
            let (mut systems, prov) = read_systems(&args.input)?;
            if systems.len() != 1 {
                return Err(Error::invalid(format!(
                    "solve takes exactly one system, got {}; use solve-multi",
                    systems.len()
                )));
            }
            (systems.remove(0), prov)
        }
    };
    let within = match args.prior {
        PriorKind::Identity => WithinPrior::IdentityScaled { gamma: args.gamma },
        PriorKind::Jacobi => WithinPrior::Jacobi,
        PriorKind::Precond => WithinPrior::Preconditioner,
        PriorKind::Separable => return Err(Error::invalid("--prior separable needs solve-multi")),
    };
    let solver = args.solver.config(system.dim())?;
    let prior = GaussianBelief::zero_mean(within.covariance(system.operator())?);
    let solution = solve(system, prior, solver)?;
    let report = SolveReport {
        version: crate::VERSION,
        seed,
        config: RunConfig {
            command: "solve",
            input,
            prior: within,
            solver,
            format: args.output.format,
        },
        termination: solution.trace.termination,
        iterations: solution.trace.records.clone(),
        posterior: Posterior::of(&solution.belief)?,
        task_jitter_applied: None,
        marginals: None,
    };
    write_report(&report, &args.output)
}

fn multi_prior(args: &MultiArgs, j: usize) -> Result<PriorSpec> {
    let within = within_prior(
        match args.prior {
            PriorKind::Identity | PriorKind::Separable => args.within,
            PriorKind::Jacobi => WithinKind::Jacobi,
            PriorKind::Precond => WithinKind::Precond,
        },
        args.gamma,
    );
    if args.prior != PriorKind::Separable {
        if args.rho.is_some() || args.rho_scale.is_some() {
            return Err(Error::invalid("--rho and --rho-scale apply only to --prior separable"));
        }
        return Ok(PriorSpec::BlockDiagonal { within });
    }
    let task = match (args.rho, args.rho_scale) {
        (Some(rho), None) => TaskSpec::Constant { rho },
        (None, Some(rho_scale)) => {
            let thetas = args
                .thetas
                .clone()
                .ok_or_else(|| Error::invalid("--rho-scale needs --thetas"))?;
            TaskSpec::SquaredExponential { thetas, rho_scale }
        }
        (Some(_), Some(_)) => return Err(Error::invalid("give one of --rho and --rho-scale, not both")),
        (None, None) if j == 1 => TaskSpec::Constant { rho: 0.0 },
        (None, None) => {
            return Err(Error::invalid(
                "--prior separable with several systems needs a task covariance: --rho or --rho-scale",
            ))
        }
    };
    Ok(PriorSpec::Separable { within, task })
}

fn multi_family(args: &MultiArgs) -> Result<(SystemFamily, Provenance)> {
    check_single_source(&args.input)?;
    let seed = args.output.seed;
    match args.input.random {
        Some(d) => {
            let thetas = match (&args.thetas, args.systems) {
                (Some(t), Some(j)) if t.len() != j => {
                    return Err(Error::invalid(format!("--systems {j} disagrees with {} thetas", t.len())))
                }
                (Some(t), _) => t.clone(),
                (None, Some(j)) => default_thetas(j),
                (None, None) => return Err(Error::invalid("--random families need --systems or --thetas")),
            };
            let base = SpdOperator::dense(gen_random_spd(d, args.input.cond, seed)?)?;
            let family = gen_related_family(&base, &thetas, seed.wrapping_add(1), args.rhs_perturbation)?;
            let prov = Provenance::Generator {
                name: "related_family".into(),
                seed,
                parameters: json!({
                    "dim": d,
                    "cond": args.input.cond,
                    "thetas": thetas,
                    "rhs_perturbation": args.rhs_perturbation,
                }),
            };
            Ok((family, prov))
        }
        None => {
            if args.systems.is_some() {
                return Err(Error::invalid("--systems applies only to --random"));
            }
            let (systems, prov) = read_systems(&args.input)?;
            Ok((SystemFamily::new(systems)?, prov))
        }
    }
}

pub(crate) fn default_thetas(j: usize) -> Vec<f64> {
    (1..=j).map(|k| 0.1 * k as f64).collect()
}

fn cmd_solve_multi(args: &MultiArgs) -> Result<i32> {
    let (family, input) = multi_family(args)?;
    let spec = multi_prior(args, family.len())?;
    let matrices: Vec<SpdOperator> = family.systems().iter().map(|s| s.operator().clone()).collect();
    let (cov, jitter) = spec.joint_covariance(&matrices, 0)?;
    let solver = args.solver.config(family.block_dim() * family.len())?;
    let (stacked, solution) = solve_multi(&family, vec![0.0; cov.dim()], cov, solver)?;
    let marginals = (0..family.len())
        .map(|j| {
            let m = extract_marginal(&solution.belief, &stacked, j)?;
            Ok(Marginal {
                system: j,
                mean: m.mean().to_vec(),
                variance: m.variances()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SolveReport {
        version: crate::VERSION,
        seed: args.output.seed,
        config: RunConfig {
            command: "solve-multi",
            input,
            prior: spec,
            solver,
            format: args.output.format,
        },
        termination: solution.trace.termination,
        iterations: solution.trace.records.clone(),
        posterior: Posterior::of(&solution.belief)?,
        task_jitter_applied: Some(jitter),
        marginals: Some(marginals),
    };
    write_report(&report, &args.output)
}

fn cmd_generate(cmd: &GenerateCommand) -> Result<i32> {
    let mut bytes = Vec::new();
    let out = match cmd {
        GenerateCommand::Mesh { n, out } => {
            format_matrix_market(&gen_mesh_stiffness(*n)?, &mut bytes)?;
            out
        }
        GenerateCommand::Spd { dim, cond, seed, out } => {
            let m = gen_random_spd(*dim, *cond, *seed)?;
            format_matrix_market(&CsrMatrix::from_dense(&m), &mut bytes)?;
            out
        }
        GenerateCommand::Rhs { dim, seed, out } => {
            if *dim == 0 {
                return Err(Error::invalid("--dim must be at least 1"));
            }
            format_vector(&gen_rhs(*dim, *seed), &mut bytes)?;
            out
        }
    };
    emit(out.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}
