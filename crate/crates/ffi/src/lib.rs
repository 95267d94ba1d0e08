//! C ABI over the `bayescg` solver.
//!
//! Objects are opaque handles created by `bcg_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`BcgStatus`];
//! on failure [`bcg_last_error_message`] describes the error for the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bayescg::bayescg::{solve, GaussianBelief, LinearSystem, Solution, SolverConfig, Termination};
use bayescg::linops::{CsrMatrix, DenseMatrix, SpdOperator};
use bayescg::multibcg::{extract_marginal, solve_multi, StackedSystem, SystemFamily};
use bayescg::priors::{PriorSpec, TaskSpec, WithinPrior};
use bayescg::problems::read_matrix_market;
use bayescg::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Not symmetric, or not positive definite.
    NotSpd = 4,
    Parse = 5,
    Io = 6,
    SolveFailed = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcgTermination {
    Converged = 0,
    MaxIterations = 1,
    Breakdown = 2,
}

/// Within-system prior covariance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcgPrior {
    /// `gamma * I`.
    Identity = 0,
    /// `diag(A)^-1`.
    Jacobi = 1,
    /// `A^-1`, applied by Cholesky solves.
    Preconditioner = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcgSolverOptions {
    /// 0 means the system dimension.
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub reorthogonalize: bool,
}

/// Symmetric positive-definite operator.
pub struct BcgOperator {
    inner: SpdOperator,
}

/// Posterior and trace of a solve.
pub struct BcgResult {
    solution: Solution,
    stacked: Option<StackedSystem>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BcgStatus {
    match e {
        Error::DimensionMismatch { .. } => BcgStatus::DimensionMismatch,
        Error::NotPositiveDefinite { .. } | Error::NotSymmetric(_) | Error::NotPsd { .. } => BcgStatus::NotSpd,
        Error::Parse { .. } => BcgStatus::Parse,
        Error::Io(_) => BcgStatus::Io,
        Error::SolveFailed { .. } | Error::SingularGram { .. } | Error::NotNormalized { .. } => {
            BcgStatus::SolveFailed
        }
        _ => BcgStatus::InvalidArgument,
    }
}

struct Failure(BcgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BcgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BcgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            BcgStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn operator<'a>(p: *const BcgOperator) -> Result<&'a SpdOperator, Failure> {
    p.as_ref().map(|o| &o.inner).ok_or_else(|| null("operator"))
}

unsafe fn result<'a>(p: *const BcgResult) -> Result<&'a BcgResult, Failure> {
    p.as_ref().ok_or_else(|| null("result"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Failure(
            BcgStatus::DimensionMismatch,
            format!("output buffer holds {len} values, {} required", src.len()),
        ));
    }
    unsafe { slice_mut(dst, len, "output buffer")? }.copy_from_slice(src);
    Ok(())
}

fn config(opts: *const BcgSolverOptions) -> Result<SolverConfig, Failure> {
    let mut cfg = SolverConfig::default();
    if let Some(o) = unsafe { opts.as_ref() } {
        cfg.max_iterations = (o.max_iterations > 0).then_some(o.max_iterations);
        cfg.residual_tolerance = o.residual_tolerance;
        cfg.reorthogonalize = o.reorthogonalize;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn within(prior: BcgPrior, gamma: f64) -> WithinPrior {
    match prior {
        BcgPrior::Identity => WithinPrior::IdentityScaled { gamma },
        BcgPrior::Jacobi => WithinPrior::Jacobi,
        BcgPrior::Preconditioner => WithinPrior::Preconditioner,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bcg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn bcg_solver_options_default() -> BcgSolverOptions {
    let d = SolverConfig::default();
    BcgSolverOptions {
        max_iterations: 0,
        residual_tolerance: d.residual_tolerance,
        reorthogonalize: d.reorthogonalize,
    }
}

/// Operator from an `n`×`n` row-major dense matrix.
///
/// # Safety
/// `values` must point to `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_dense(n: usize, values: *const f64, out: *mut *mut BcgOperator) -> BcgStatus {
    guard(|| {
        let len = n.checked_mul(n).ok_or_else(|| Failure(BcgStatus::InvalidArgument, "n * n overflows".into()))?;
        let data = slice(values, len, "values")?.to_vec();
        let inner = SpdOperator::dense(DenseMatrix::from_row_major(n, n, data)?)?;
        put(out, BcgOperator { inner })
    })
}

/// Operator from an `n`×`n` CSR matrix with 0-based indices.
///
/// # Safety
/// `row_ptr` must hold `n + 1` entries; `col_idx` and `values` must hold
/// `row_ptr[n]` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_csr(
    n: usize,
    row_ptr: *const usize,
    col_idx: *const usize,
    values: *const f64,
    out: *mut *mut BcgOperator,
) -> BcgStatus {
    guard(|| {
        let rows = n
            .checked_add(1)
            .ok_or_else(|| Failure(BcgStatus::InvalidArgument, "n + 1 overflows".into()))?;
        let rp = slice(row_ptr, rows, "row_ptr")?.to_vec();
        let nnz = *rp.last().unwrap_or(&0);
        let ci = slice(col_idx, nnz, "col_idx")?.to_vec();
        let vals = slice(values, nnz, "values")?.to_vec();
        let inner = SpdOperator::sparse(CsrMatrix::try_new(n, n, rp, ci, vals)?)?;
        put(out, BcgOperator { inner })
    })
}

/// Operator from a Matrix Market coordinate file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_read_matrix_market(path: *const c_char, out: *mut *mut BcgOperator) -> BcgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(BcgStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let inner = SpdOperator::sparse(read_matrix_market(path)?)?;
        put(out, BcgOperator { inner })
    })
}

/// Dimension of `op`, or 0 for NULL.
///
/// # Safety
/// `op` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_dim(op: *const BcgOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.dim())
}

/// `y = op * x`, both of length `n`.
///
/// # Safety
/// `op` must be a live handle; `x` and `y` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_apply(op: *const BcgOperator, x: *const f64, y: *mut f64, n: usize) -> BcgStatus {
    guard(|| {
        let a = operator(op)?;
        let v = a.apply(slice(x, n, "x")?)?;
        copy_out(&v, y, n)
    })
}

/// # Safety
/// `op` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcg_operator_free(op: *mut BcgOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Solves `a x = b` from a zero prior mean. `opts` may be NULL for defaults.
///
/// # Safety
/// `a` must be a live handle; `b` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcg_solve(
    a: *const BcgOperator,
    b: *const f64,
    n: usize,
    prior: BcgPrior,
    gamma: f64,
    opts: *const BcgSolverOptions,
    out: *mut *mut BcgResult,
) -> BcgStatus {
    guard(|| {
        let a = operator(a)?;
        let system = LinearSystem::new(a.clone(), slice(b, n, "b")?.to_vec())?;
        let cfg = config(opts)?;
        let cov = within(prior, gamma).covariance(a)?;
        let solution = solve(system, GaussianBelief::zero_mean(cov), cfg)?;
        put(out, BcgResult { solution, stacked: None })
    })
}

/// Jointly solves `count` systems of dimension `n`. `rhs` holds the
/// right-hand sides back to back (`count * n` doubles). With `rho == 0` the
/// joint prior is block-diagonal with the within prior built per system;
/// otherwise it is `B ⊗ Σ₀(A_0)` with `B = (1 − rho) I + rho 11ᵀ`.
///
/// # Safety
/// `ops` must hold `count` live handles; `rhs` must hold `count * n`
/// doubles; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bcg_solve_multi(
    ops: *const *const BcgOperator,
    count: usize,
    rhs: *const f64,
    n: usize,
    prior: BcgPrior,
    gamma: f64,
    rho: f64,
    opts: *const BcgSolverOptions,
    out: *mut *mut BcgResult,
) -> BcgStatus {
    guard(|| {
        if count == 0 {
            return Err(Failure(BcgStatus::InvalidArgument, "count must be at least 1".into()));
        }
        let handles = slice(ops, count, "ops")?;
        let total = count
            .checked_mul(n)
            .ok_or_else(|| Failure(BcgStatus::InvalidArgument, "count * n overflows".into()))?;
        let b = slice(rhs, total, "rhs")?;
        let matrices = handles
            .iter()
            .map(|&h| operator(h).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        let systems = matrices
            .iter()
            .zip(b.chunks(n.max(1)))
            .map(|(a, bj)| LinearSystem::new(a.clone(), bj.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let family = SystemFamily::new(systems)?;
        let within = within(prior, gamma);
        let spec = if rho == 0.0 {
            PriorSpec::BlockDiagonal { within }
        } else {
            PriorSpec::Separable {
                within,
                task: TaskSpec::Constant { rho },
            }
        };
        let (cov, _) = spec.joint_covariance(&matrices, 0)?;
        let cfg = config(opts)?;
        let (stacked, solution) = solve_multi(&family, vec![0.0; cov.dim()], cov, cfg)?;
        put(
            out,
            BcgResult {
                solution,
                stacked: Some(stacked),
            },
        )
    })
}

/// Length of the posterior mean (the stacked dimension for joint solves),
/// or 0 for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_dim(res: *const BcgResult) -> usize {
    res.as_ref().map_or(0, |r| r.solution.belief.dim())
}

/// Number of completed iterations, or 0 for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_iterations(res: *const BcgResult) -> usize {
    res.as_ref().map_or(0, |r| r.solution.trace.records.len())
}

/// Number of systems: 1 for single solves, 0 for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_system_count(res: *const BcgResult) -> usize {
    res.as_ref()
        .map_or(0, |r| r.stacked.as_ref().map_or(1, |s| s.block_count()))
}

/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_termination(res: *const BcgResult, out: *mut BcgTermination) -> BcgStatus {
    guard(|| {
        let r = result(res)?;
        let t = match r.solution.trace.termination {
            Some(Termination::Converged) => BcgTermination::Converged,
            Some(Termination::MaxIterations) => BcgTermination::MaxIterations,
            Some(Termination::Breakdown) => BcgTermination::Breakdown,
            None => return Err(Failure(BcgStatus::SolveFailed, "solve did not terminate".into())),
        };
        if out.is_null() {
            return Err(null("out"));
        }
        *out = t;
        Ok(())
    })
}

/// Copies the posterior mean; `len` must equal [`bcg_result_dim`].
///
/// # Safety
/// `res` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_mean(res: *const BcgResult, out: *mut f64, len: usize) -> BcgStatus {
    guard(|| copy_out(result(res)?.solution.belief.mean(), out, len))
}

/// Copies the posterior marginal variances; `len` must equal [`bcg_result_dim`].
///
/// # Safety
/// `res` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_variance(res: *const BcgResult, out: *mut f64, len: usize) -> BcgStatus {
    guard(|| copy_out(&result(res)?.solution.belief.variances()?, out, len))
}

/// Copies `‖r_m‖` for every iteration; `len` must equal [`bcg_result_iterations`].
///
/// # Safety
/// `res` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_residual_norms(res: *const BcgResult, out: *mut f64, len: usize) -> BcgStatus {
    guard(|| {
        let norms: Vec<f64> = result(res)?
            .solution
            .trace
            .records
            .iter()
            .map(|r| r.residual_norm)
            .collect();
        copy_out(&norms, out, len)
    })
}

/// Copies the posterior mean and variances of system `j` (0-based) of a
/// joint solve; both buffers hold `len` doubles, the per-system dimension.
/// `variance` may be NULL.
///
/// # Safety
/// `res` must be a live handle; `mean` (and `variance` unless NULL) must
/// hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_marginal(
    res: *const BcgResult,
    j: usize,
    mean: *mut f64,
    variance: *mut f64,
    len: usize,
) -> BcgStatus {
    guard(|| {
        let r = result(res)?;
        let marginal = match &r.stacked {
            Some(stacked) => extract_marginal(&r.solution.belief, stacked, j)?,
            None if j == 0 => r.solution.belief.clone(),
            None => {
                return Err(Failure(
                    BcgStatus::InvalidArgument,
                    format!("system index {j} out of range for a single solve"),
                ))
            }
        };
        copy_out(marginal.mean(), mean, len)?;
        if !variance.is_null() {
            copy_out(&marginal.variances()?, variance, len)?;
        }
        Ok(())
    })
}

/// # Safety
/// `res` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcg_result_free(res: *mut BcgResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
