//! Bayesian conjugate gradient.
//!
//! The solution `x` of `A x = b` is given a Gaussian prior `N(x₀, Σ₀)` and
//! conditioned on the noiseless projections `yᵢ = sᵢᵀ b`. Search directions
//! are orthonormal in the inner product weighted by the Gram operator
//! `W = A Σ₀ Aᵀ`, so the projection Gram matrix is the identity and the
//! posterior is a rank-one update per iteration:
//!
//! ```text
//! x_m = x_{m-1} + (Σ₀ Aᵀ s_m)(s_mᵀ r_{m-1})
//! Σ_m = Σ₀ − Σᵢ (Σ₀ Aᵀ sᵢ)(Σ₀ Aᵀ sᵢ)ᵀ
//! ```
//!
//! The same loop runs the stacked multi-system problem (see [`crate::multibcg`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{axpy, check_len, dot, ensure_finite, norm2, SpdOperator};

/// Tolerance on `|‖s‖_W − 1|` accepted by [`SolverState::observe_and_update`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: SpdOperator,
    b: Vec<f64>,
}

impl LinearSystem {
    pub fn new(a: SpdOperator, b: Vec<f64>) -> Result<Self> {
        check_len("linear system rhs", a.dim(), b.len())?;
        ensure_finite(&b, "right-hand side")?;
        Ok(LinearSystem { a, b })
    }

    pub fn operator(&self) -> &SpdOperator {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ax = self.a.apply(x)?;
        Ok(self.b.iter().zip(&ax).map(|(b, a)| b - a).collect())
    }
}

/// Gaussian belief `N(mean, base_cov − F Fᵀ)` where `F` holds the downdate
/// columns. The covariance is only ever applied, never formed.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    mean: Vec<f64>,
    base_cov: SpdOperator,
    downdate: Vec<Vec<f64>>,
}

impl GaussianBelief {
    pub fn new(mean: Vec<f64>, cov: SpdOperator) -> Result<Self> {
        check_len("belief mean", cov.dim(), mean.len())?;
        ensure_finite(&mean, "prior mean")?;
        Ok(GaussianBelief {
            mean,
            base_cov: cov,
            downdate: Vec::new(),
        })
    }

    pub fn with_downdate(mean: Vec<f64>, cov: SpdOperator, downdate: Vec<Vec<f64>>) -> Result<Self> {
        let mut belief = Self::new(mean, cov)?;
        for col in &downdate {
            check_len("downdate column", belief.dim(), col.len())?;
            ensure_finite(col, "downdate column")?;
        }
        belief.downdate = downdate;
        Ok(belief)
    }

    pub fn zero_mean(cov: SpdOperator) -> Self {
        GaussianBelief {
            mean: vec![0.0; cov.dim()],
            base_cov: cov,
            downdate: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn base_cov(&self) -> &SpdOperator {
        &self.base_cov
    }

    pub fn downdate_cols(&self) -> &[Vec<f64>] {
        &self.downdate
    }

    /// Number of rank-one downdates applied (completed iterations).
    pub fn rank(&self) -> usize {
        self.downdate.len()
    }

    /// `Σ v`.
    pub fn apply_cov(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.base_cov.apply(v)?;
        for f in &self.downdate {
            axpy(-dot(f, v), f, &mut out);
        }
        Ok(out)
    }

    /// Marginal variances `Σ_ii`.
    pub fn variances(&self) -> Result<Vec<f64>> {
        let mut var = self.base_cov.diagonal_entries()?;
        for f in &self.downdate {
            var.iter_mut().zip(f).for_each(|(v, x)| *v -= x * x);
        }
        Ok(var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `None` means the system dimension.
    pub max_iterations: Option<usize>,
    /// On `‖r_m‖₂ / ‖b‖₂`.
    pub residual_tolerance: f64,
    /// On `‖s̃_m‖_W` relative to the first direction's W-norm.
    pub breakdown_tolerance: f64,
    /// Re-project each new direction against every stored one. Off reproduces
    /// the plain two-term recurrence.
    pub reorthogonalize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: None,
            residual_tolerance: 1e-10,
            breakdown_tolerance: 1e-14,
            reorthogonalize: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0 && self.breakdown_tolerance > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn with_max_iterations(mut self, m: usize) -> Self {
        self.max_iterations = Some(m);
        self
    }

    pub fn with_residual_tolerance(mut self, tol: f64) -> Self {
        self.residual_tolerance = tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Breakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub m: usize,
    pub residual_norm: f64,
    /// `‖s̃_m‖_W` before normalization.
    pub direction_norm: f64,
    pub y: f64,
    /// `max_i |s_iᵀ W s_m − δ_im|` over stored directions.
    pub conjugacy_defect: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    /// Error that aborted the run, if any.
    pub failure: Option<String>,
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub belief: GaussianBelief,
    pub trace: SolveTrace,
    /// W-normalized search directions, in order.
    pub directions: Vec<Vec<f64>>,
}

/// Outcome of [`SolverState::next_direction`].
#[derive(Debug, Clone, PartialEq)]
pub enum NextDirection {
    Search(Vec<f64>),
    Stop(Termination),
}

/// Products computed while normalizing a direction, reused by the update.
#[derive(Debug, Clone)]
struct Pending {
    s: Vec<f64>,
    f: Vec<f64>,
    w_s: Vec<f64>,
    tilde_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    system: LinearSystem,
    belief: GaussianBelief,
    config: SolverConfig,
    gram: SpdOperator,
    residual: Vec<f64>,
    b_norm: f64,
    directions: Vec<Vec<f64>>,
    /// `W sᵢ` for every stored direction.
    gram_directions: Vec<Vec<f64>>,
    data: Vec<f64>,
    first_norm: Option<f64>,
    pending: Option<Pending>,
    trace: SolveTrace,
}

impl SolverState {
    pub fn init(system: LinearSystem, prior: GaussianBelief, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        check_len("prior dimension", system.dim(), prior.dim())?;
        if prior.rank() != 0 {
            return Err(Error::invalid("prior must not carry downdate columns"));
        }
        let gram = SpdOperator::sandwich(system.operator(), prior.base_cov())?;
        let residual = system.residual(prior.mean())?;
        let b_norm = norm2(system.rhs());
        let mut state = SolverState {
            system,
            belief: prior,
            config,
            gram,
            residual,
            b_norm,
            directions: Vec::new(),
            gram_directions: Vec::new(),
            data: Vec::new(),
            first_norm: None,
            pending: None,
            trace: SolveTrace::default(),
        };
        if state.is_converged() {
            state.trace.termination = Some(Termination::Converged);
        }
        Ok(state)
    }

    pub fn iteration(&self) -> usize {
        self.directions.len()
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// The Gram operator `A Σ₀ Aᵀ` defining the direction inner product.
    pub fn gram(&self) -> &SpdOperator {
        &self.gram
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn data_values(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> &SolveTrace {
        &self.trace
    }

    pub fn termination(&self) -> Option<Termination> {
        self.trace.termination
    }

    pub fn is_terminal(&self) -> bool {
        self.trace.termination.is_some()
    }

    pub fn relative_residual(&self) -> f64 {
        let denom = if self.b_norm > 0.0 { self.b_norm } else { 1.0 };
        norm2(&self.residual) / denom
    }

    fn is_converged(&self) -> bool {
        self.relative_residual() <= self.config.residual_tolerance
    }

    fn max_iterations(&self) -> usize {
        self.config.max_iterations.unwrap_or(self.system.dim())
    }

    fn stop(&mut self, why: Termination) -> NextDirection {
        self.trace.termination = Some(why);
        self.pending = None;
        NextDirection::Stop(why)
    }

    /// Next W-normalized search direction, or the reason the solve stops.
    pub fn next_direction(&mut self) -> Result<NextDirection> {
        if let Some(t) = self.trace.termination {
            return Ok(NextDirection::Stop(t));
        }
        if self.residual.iter().all(|&r| r == 0.0) {
            return Ok(self.stop(Termination::Converged));
        }

        let mut tilde = self.residual.clone();
        if let (Some(prev), Some(w_prev)) = (self.directions.last(), self.gram_directions.last()) {
            let c = dot(w_prev, &tilde);
            axpy(-c, prev, &mut tilde);
            if self.config.reorthogonalize {
                for _ in 0..2 {
                    for (s_i, w_i) in self.directions.iter().zip(&self.gram_directions) {
                        let c = dot(w_i, &tilde);
                        axpy(-c, s_i, &mut tilde);
                    }
                }
            }
        }

        let a_t = self.system.operator().apply(&tilde)?;
        let f_t = self.belief.base_cov().apply(&a_t)?;
        let w_t = self.system.operator().apply(&f_t)?;
        let q = dot(&tilde, &w_t);
        if q < -1e-10 * norm2(&tilde) * norm2(&w_t) {
            return Err(Error::NotPsd { value: q });
        }
        let norm = q.max(0.0).sqrt();
        let reference = *self.first_norm.get_or_insert(norm);
        if norm == 0.0 || norm <= self.config.breakdown_tolerance * reference {
            let why = if self.is_converged() {
                Termination::Converged
            } else {
                Termination::Breakdown
            };
            return Ok(self.stop(why));
        }

        let inv = 1.0 / norm;
        let scale = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * inv).collect() };
        let s = scale(tilde);
        self.pending = Some(Pending {
            s: s.clone(),
            f: scale(f_t),
            w_s: scale(w_t),
            tilde_norm: norm,
        });
        Ok(NextDirection::Search(s))
    }

    /// Conditions on `y = sᵀ b` for a W-normalized direction `s`.
    ///
    /// Re-observing a direction already conditioned on is a no-op.
    pub fn observe_and_update(&mut self, s: &[f64]) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::invalid("solver state is terminal"));
        }
        check_len("search direction", self.system.dim(), s.len())?;
        ensure_finite(s, "search direction")?;

        let pending = match self.pending.take() {
            Some(p) if p.s == s => p,
            _ => {
                let a_s = self.system.operator().apply(s)?;
                let f = self.belief.base_cov().apply(&a_s)?;
                let w_s = self.system.operator().apply(&f)?;
                Pending {
                    s: s.to_vec(),
                    f,
                    w_s,
                    tilde_norm: f64::NAN,
                }
            }
        };
        let q = dot(s, &pending.w_s);
        let norm = q.max(0.0).sqrt();
        if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }

        let mut defect = (q - 1.0).abs();
        for s_i in &self.directions {
            let c = dot(s_i, &pending.w_s).abs();
            if (c - 1.0).abs() <= NORMALIZATION_TOLERANCE {
                // Already observed: the projection has nothing new to add.
                return Ok(());
            }
            defect = defect.max(c);
        }

        let y = dot(s, self.system.rhs());
        let alpha = dot(s, &self.residual);
        axpy(alpha, &pending.f, &mut self.belief.mean);
        ensure_finite(&self.belief.mean, "posterior mean")?;
        self.belief.downdate.push(pending.f);
        self.residual = self.system.residual(&self.belief.mean)?;
        self.directions.push(pending.s);
        self.gram_directions.push(pending.w_s);
        self.data.push(y);

        let m = self.directions.len();
        let direction_norm = if pending.tilde_norm.is_nan() {
            norm
        } else {
            pending.tilde_norm
        };
        self.first_norm.get_or_insert(direction_norm);
        self.trace.records.push(IterationRecord {
            m,
            residual_norm: norm2(&self.residual),
            direction_norm,
            y,
            conjugacy_defect: defect,
        });

        if self.is_converged() {
            self.trace.termination = Some(Termination::Converged);
        } else if m >= self.max_iterations() {
            self.trace.termination = Some(Termination::MaxIterations);
        }
        Ok(())
    }

    /// Runs to termination.
    pub fn run(&mut self) -> Result<()> {
        loop {
            let step = self.next_direction().and_then(|next| match next {
                NextDirection::Search(s) => self.observe_and_update(&s).map(|_| false),
                NextDirection::Stop(_) => Ok(true),
            });
            match step {
                Ok(true) => return Ok(()),
                Ok(false) => {}
                Err(e) => {
                    self.trace.failure = Some(e.to_string());
                    return Err(Error::SolveFailed {
                        source: Box::new(e),
                        trace: Box::new(self.trace.clone()),
                    });
                }
            }
        }
    }

    pub fn into_solution(self) -> Solution {
        Solution {
            belief: self.belief,
            trace: self.trace,
            directions: self.directions,
        }
    }
}

/// Iterates until convergence, `max_iterations`, or breakdown.
pub fn solve(system: LinearSystem, prior: GaussianBelief, config: SolverConfig) -> Result<Solution> {
    let mut state = SolverState::init(system, prior, config)?;
    state.run()?;
    Ok(state.into_solution())
}
