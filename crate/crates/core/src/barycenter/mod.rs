//! Entropic Wasserstein barycenters by iterative scaling.
//!
//! [`balanced_barycenter`] handles normalized predictions (multi-class),
//! [`unbalanced_barycenter`] handles nonnegative scores of arbitrary mass
//! (multi-label) by relaxing the marginal constraints with an extended KL
//! penalty of weight `kl_lambda`.
//!
//! Both solvers have two numerical paths. The scaling path multiplies kernels
//! with scaling vectors directly and is the fast default. The log path keeps
//! `log u` and `log v` and evaluates kernel products with log-sum-exp, so it
//! never under- or overflows; for cost-based kernels it also anneals epsilon
//! from the cost scale down to the target value, warm-starting each stage.
//! With [`Domain::Auto`] the log path is taken for cost-based kernels with
//! `epsilon < 1e-2`, for unbalanced problems with `kl_lambda >= 1e3 epsilon`,
//! and as a fallback whenever the scaling path produces a non-finite value.

pub(crate) mod log_domain;
mod scaling;

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ground_metric::{kernel_from_cost, GroundMetric};
use crate::measures::{normalize, EnsembleInput, Histogram};
use crate::scalar::Scalar;

/// `kl_lambda / epsilon` from which [`Domain::Auto`] runs unbalanced problems on the log path.
pub const LOG_DOMAIN_KL_RATIO: f64 = 1e3;

/// Which numerical path a solver runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Auto,
    Scaling,
    Log,
}

/// Epsilon below which [`Domain::Auto`] switches cost-based kernels to the log path.
pub const LOG_DOMAIN_EPSILON: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams<T> {
    /// Entropic regularization.
    pub epsilon: T,
    /// Weight of the KL marginal penalty (unbalanced solver only).
    pub kl_lambda: T,
    pub max_iter: usize,
    /// Stop once the l1 change of the barycenter between sweeps is at most this.
    pub tolerance: T,
    pub domain: Domain,
    /// Over-relaxation factor applied to the scaling updates, in `(0, 2)`.
    /// `1` is the plain alternating update. `None` picks one per path: plain
    /// updates on the scaling path; on the log path `1.8` for annealed
    /// balanced runs and [`optimal_relaxation`] for unbalanced runs.
    pub relaxation: Option<T>,
    pub renormalize_output: bool,
    /// Materialize the couplings `diag(u) K diag(v)` in the result.
    pub keep_couplings: bool,
}

impl<T: Scalar> SolverParams<T> {
    /// Defaults: five sweeps, tolerance `1e-9`, plain updates, no couplings.
    pub fn new(epsilon: T) -> Self {
        Self {
            epsilon,
            kl_lambda: T::one(),
            max_iter: 5,
            tolerance: T::of(1e-9),
            domain: Domain::Auto,
            relaxation: None,
            renormalize_output: false,
            keep_couplings: false,
        }
    }

    pub fn with_kl_lambda(mut self, kl_lambda: T) -> Self {
        self.kl_lambda = kl_lambda;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tolerance(mut self, tolerance: T) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_relaxation(mut self, relaxation: T) -> Self {
        self.relaxation = Some(relaxation);
        self
    }

    pub fn with_couplings(mut self, keep: bool) -> Self {
        self.keep_couplings = keep;
        self
    }

    pub fn with_renormalized_output(mut self, renormalize: bool) -> Self {
        self.renormalize_output = renormalize;
        self
    }

    fn validate(&self, unbalanced: bool) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if unbalanced && (!(self.kl_lambda > T::zero()) || !self.kl_lambda.is_finite()) {
            return Err(Error::InvalidParameter("kl_lambda must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= T::zero()) {
            return Err(Error::InvalidParameter(
                "tolerance must be nonnegative".into(),
            ));
        }
        if matches!(self.relaxation, Some(w) if !(w > T::zero() && w < T::of(2.0))) {
            return Err(Error::InvalidParameter(
                "relaxation must lie in (0, 2)".into(),
            ));
        }
        Ok(())
    }
}

/// Over-relaxation factor `2 / (1 + sqrt(1 - r^2))` for a linear contraction rate `r^2`.
///
/// The unbalanced updates contract slow modes by `r^2` per sweep with
/// `r = kl_lambda / (kl_lambda + epsilon)`, which is very close to one when
/// `kl_lambda >> epsilon`.
pub fn optimal_relaxation<T: Scalar>(r: T) -> T {
    T::of(2.0) / (T::one() + (T::one() - r * r).max(T::zero()).sqrt())
}

/// Transport plan between a model's bins (rows) and the barycenter's bins (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    pub matrix: Array2<T>,
}

impl<T: Scalar> Coupling<T> {
    pub fn row_sums(&self) -> Vec<T> {
        self.matrix.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        self.matrix.columns().into_iter().map(|c| c.sum()).collect()
    }

    pub fn total(&self) -> T {
        self.matrix.sum()
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult<T> {
    pub barycenter: Histogram<T>,
    /// Present when requested through [`SolverParams::keep_couplings`].
    pub couplings: Option<Vec<Coupling<T>>>,
    pub iterations_run: usize,
    /// l1 change of the barycenter in the last sweep (infinite after one sweep).
    pub final_residual: T,
    pub converged: bool,
    /// Path actually used (never [`Domain::Auto`]).
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Balanced,
    Unbalanced,
}

/// What a solver core returns before it is wrapped into a histogram.
pub(crate) struct RawSolution<T> {
    pub p: Vec<T>,
    pub couplings: Option<Vec<Array2<T>>>,
    pub iterations: usize,
    pub residual: T,
    pub converged: bool,
}

fn check_kernel_epsilon<T: Scalar>(gm: &GroundMetric<T>, epsilon: T) -> Result<()> {
    match gm.epsilon() {
        Some(e) if (e - epsilon).abs() > T::of(1e-12) * e.abs().max(epsilon.abs()) => {
            Err(Error::InvalidParameter(format!(
                "kernel was built with epsilon {e} but the solver runs with {epsilon}"
            )))
        }
        _ => Ok(()),
    }
}

fn prefers_log_domain<T: Scalar>(
    input: &EnsembleInput<T>,
    params: &SolverParams<T>,
    mode: Mode,
) -> bool {
    let small_eps = params.epsilon < T::of(LOG_DOMAIN_EPSILON)
        && input.kernels().iter().any(|k| k.cost().is_some());
    let stiff =
        mode == Mode::Unbalanced && params.kl_lambda >= T::of(LOG_DOMAIN_KL_RATIO) * params.epsilon;
    small_eps || stiff
}

/// Kernels for the scaling path, built from costs where none is stored.
fn scaling_kernels<T: Scalar>(input: &EnsembleInput<T>, epsilon: T) -> Result<Vec<Arc<Array2<T>>>> {
    input
        .kernels()
        .iter()
        .map(|gm| match gm.kernel() {
            Some(k) => Ok(Arc::new(k.clone())),
            None => Ok(Arc::new(
                kernel_from_cost(gm, epsilon)?
                    .kernel()
                    .expect("kernel_from_cost sets the kernel")
                    .clone(),
            )),
        })
        .collect()
}

/// Whether the balanced stopping rule also checks the row marginals.
///
/// Skipped when every kernel is diagonal: couplings are then diagonal too,
/// their rows equal their columns, and the rows can only match `mu_l` when
/// all models agree.
fn checks_rows<T: Scalar>(input: &EnsembleInput<T>, mode: Mode) -> bool {
    let diagonal = |gm: &GroundMetric<T>| match (gm.cost(), gm.kernel()) {
        (None, Some(k)) => k
            .indexed_iter()
            .all(|((i, j), &x)| i == j || x <= T::KERNEL_FLOOR),
        _ => false,
    };
    mode == Mode::Balanced && !input.kernels().iter().all(|gm| diagonal(gm))
}

fn solve<T: Scalar>(
    input: &EnsembleInput<T>,
    params: &SolverParams<T>,
    mode: Mode,
) -> Result<BarycenterResult<T>> {
    params.validate(mode == Mode::Unbalanced)?;
    for gm in input.kernels() {
        check_kernel_epsilon(gm, params.epsilon)?;
    }
    for (model, h) in input.models().iter().enumerate() {
        if mode == Mode::Balanced && !h.sums_to_one(T::INPUT_NORM_TOL) {
            return Err(Error::NotNormalizedInput { model });
        }
        if h.total_mass() == T::zero() {
            return Err(Error::ZeroTotalMass);
        }
    }

    let rows = checks_rows(input, mode);
    let (raw, domain) = match params.domain {
        Domain::Scaling => (
            scaling::solve(
                input,
                &scaling_kernels(input, params.epsilon)?,
                params,
                mode,
                rows,
            )?,
            Domain::Scaling,
        ),
        Domain::Log => (log_domain::solve(input, params, mode, rows)?, Domain::Log),
        Domain::Auto => {
            if prefers_log_domain(input, params, mode) {
                (log_domain::solve(input, params, mode, rows)?, Domain::Log)
            } else {
                let attempt = scaling_kernels(input, params.epsilon)
                    .and_then(|ks| scaling::solve(input, &ks, params, mode, rows));
                match attempt {
                    Ok(raw) => (raw, Domain::Scaling),
                    Err(
                        Error::DivisionUnderflow { .. }
                        | Error::ExponentOverflow
                        | Error::UnderflowAllZeroRow { .. },
                    ) => (log_domain::solve(input, params, mode, rows)?, Domain::Log),
                    Err(e) => return Err(e),
                }
            }
        }
    };

    let target = input.target().clone();
    let mut barycenter = Histogram::from_parts_unchecked(target, raw.p, false);
    if params.renormalize_output {
        barycenter = normalize(barycenter)?;
    }
    Ok(BarycenterResult {
        barycenter,
        couplings: raw
            .couplings
            .map(|cs| cs.into_iter().map(|matrix| Coupling { matrix }).collect()),
        iterations_run: raw.iterations,
        final_residual: raw.residual,
        converged: raw.converged,
        domain,
    })
}

/// Entropic barycenter of normalized predictions.
///
/// Each sweep updates `u_l = mu_l / (K_l v_l)`, then
/// `p = prod_l (K_l^T u_l)^lambda_l` (accumulated in log space), then
/// `v_l = p / (K_l^T u_l)`. Iteration stops after `max_iter` sweeps or when a
/// sweep would move `p` by at most `tolerance` in l1; in the latter case the
/// state that sweep started from is returned. Unless every kernel is
/// diagonal, the stop also requires the couplings to match every `mu_l`
/// within `tolerance` in l1, which keeps slow small-epsilon runs from stopping
/// on a plateau of `p`. With identity kernels the first sweep lands on the weighted geometric mean
/// and the second one certifies it, so the output equals
/// [`geometric_mean`](crate::frechet::geometric_mean) bit for bit.
pub fn balanced_barycenter<T: Scalar>(
    input: &EnsembleInput<T>,
    params: &SolverParams<T>,
) -> Result<BarycenterResult<T>> {
    solve(input, params, Mode::Balanced)
}

/// Entropic barycenter of unnormalized scores with KL-relaxed marginals.
///
/// With `a = kl_lambda / (kl_lambda + epsilon)` each sweep updates
/// `u_l = (mu_l / (K_l v_l))^a`, then
/// `p = (sum_l lambda_l (K_l^T u_l)^(1 - a))^(1 / (1 - a))`, then
/// `v_l = (p / (K_l^T u_l))^a`. Iteration stops after `max_iter` sweeps or
/// when a sweep would move `p` by at most `tolerance` in l1, returning the
/// state that sweep started from.
pub fn unbalanced_barycenter<T: Scalar>(
    input: &EnsembleInput<T>,
    params: &SolverParams<T>,
) -> Result<BarycenterResult<T>> {
    solve(input, params, Mode::Unbalanced)
}

/// Share of barycenter bin `target_bin` contributed by each source bin, per model.
///
/// Column `target_bin` of every coupling, normalized to sum to one.
pub fn attribute_sources<T: Scalar>(
    result: &BarycenterResult<T>,
    target_bin: usize,
) -> Result<Vec<Vec<T>>> {
    let couplings = result.couplings.as_ref().ok_or(Error::MissingCouplings)?;
    couplings
        .iter()
        .map(|c| {
            if target_bin >= c.matrix.ncols() {
                return Err(Error::InvalidParameter(format!(
                    "target bin {target_bin} out of range"
                )));
            }
            let col = c.matrix.column(target_bin);
            let s = col.sum();
            if !(s > T::zero()) {
                return Err(Error::ZeroColumn { col: target_bin });
            }
            Ok(col.iter().map(|&x| x / s).collect())
        })
        .collect()
}
