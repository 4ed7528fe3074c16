//! Log-domain path with epsilon annealing for cost-based kernels.

use ndarray::Array2;

use super::{optimal_relaxation, Mode, RawSolution, SolverParams};
use crate::error::{Error, Result};
use crate::measures::EnsembleInput;
use crate::scalar::{floor_at, log_sum_exp, Scalar};

/// Factor between consecutive annealing stages.
const ANNEAL_FACTOR: f64 = 0.5;
/// An annealing stage ends early once no dual potential moves by more than
/// this fraction of the stage epsilon (potentials measured in cost units).
pub(crate) const STAGE_POTENTIAL_TOL: f64 = 1e-3;
/// Relaxation used by annealed balanced runs when none is requested.
const ANNEALED_BALANCED_RELAXATION: f64 = 1.8;

pub(crate) enum LogKernel<'a, T> {
    Cost(&'a Array2<T>),
    Fixed(Array2<T>),
}

impl<T: Scalar> LogKernel<'_, T> {
    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize, inv_eps: T) -> T {
        match self {
            LogKernel::Cost(c) => -c[(i, j)] * inv_eps,
            LogKernel::Fixed(k) => k[(i, j)],
        }
    }

    pub(crate) fn dim(&self) -> (usize, usize) {
        match self {
            LogKernel::Cost(c) => c.dim(),
            LogKernel::Fixed(k) => k.dim(),
        }
    }
}

/// Elementwise log of a stored kernel.
///
/// Entries at the clamp floor stand for structural zeros (identity and
/// diagonal kernels store their off-diagonal that way) and become `-inf`, as
/// long as every row and column keeps a positive entry. The floor only guards
/// divisions on the scaling path; here it would act as a finite transport
/// cost `-epsilon ln(floor)`, which matters once the potentials grow past
/// `-ln(floor)` as they do for `kl_lambda >> epsilon`.
pub(crate) fn log_kernel<T: Scalar>(k: &Array2<T>) -> Array2<T> {
    let floor = T::KERNEL_FLOOR;
    let rows_ok = k.rows().into_iter().all(|r| r.iter().any(|&x| x > floor));
    let cols_ok = k
        .columns()
        .into_iter()
        .all(|c| c.iter().any(|&x| x > floor));
    if rows_ok && cols_ok {
        k.mapv(|x| if x > floor { x.ln() } else { T::neg_infinity() })
    } else {
        k.mapv(|x| floor_at(x, floor).ln())
    }
}

/// `out_i = log sum_j exp(logK_ij + beta_j)`.
pub(crate) fn lse_rows<T: Scalar>(k: &LogKernel<'_, T>, inv_eps: T, beta: &[T], out: &mut [T]) {
    let (_, cols) = k.dim();
    for (i, o) in out.iter_mut().enumerate() {
        let mut max = T::neg_infinity();
        for (j, &b) in beta.iter().enumerate().take(cols) {
            let x = k.at(i, j, inv_eps) + b;
            if x > max {
                max = x;
            }
        }
        if !max.is_finite() {
            *o = max;
            continue;
        }
        let mut s = T::zero();
        for (j, &b) in beta.iter().enumerate().take(cols) {
            s += (k.at(i, j, inv_eps) + b - max).exp();
        }
        *o = max + s.ln();
    }
}

/// `out_j = log sum_i exp(logK_ij + alpha_i)`.
pub(crate) fn lse_cols<T: Scalar>(k: &LogKernel<'_, T>, inv_eps: T, alpha: &[T], out: &mut [T]) {
    let (rows, _) = k.dim();
    out.iter_mut().for_each(|o| *o = T::neg_infinity());
    for (i, &a) in alpha.iter().enumerate().take(rows) {
        for (j, o) in out.iter_mut().enumerate() {
            let x = k.at(i, j, inv_eps) + a;
            if x > *o {
                *o = x;
            }
        }
    }
    let maxes: Vec<T> = out.to_vec();
    let mut sums = vec![T::zero(); out.len()];
    for (i, &a) in alpha.iter().enumerate().take(rows) {
        for (j, s) in sums.iter_mut().enumerate() {
            if maxes[j].is_finite() {
                *s += (k.at(i, j, inv_eps) + a - maxes[j]).exp();
            }
        }
    }
    for ((o, &mx), &s) in out.iter_mut().zip(&maxes).zip(&sums) {
        if mx.is_finite() {
            *o = mx + s.ln();
        }
    }
}

/// Epsilon schedule: geometric from the largest cost down to (excluding) the
/// target, with a per-stage sweep cap. Empty when the budget cannot afford it.
pub(crate) fn anneal_schedule<T: Scalar>(c_max: T, target: T, max_iter: usize) -> (Vec<T>, usize) {
    let mut stages = Vec::new();
    let mut e = c_max;
    while e > target * T::of(1.0 / ANNEAL_FACTOR) {
        stages.push(e);
        e *= T::of(ANNEAL_FACTOR);
    }
    if stages.is_empty() || max_iter < 4 * stages.len() {
        return (Vec::new(), 0);
    }
    let cap = max_iter / (2 * stages.len());
    (stages, cap)
}

fn schedule<T: Scalar>(kernels: &[LogKernel<'_, T>], params: &SolverParams<T>) -> (Vec<T>, usize) {
    let mut c_max = T::zero();
    for k in kernels {
        match k {
            LogKernel::Cost(c) => {
                c_max = c.iter().fold(c_max, |a, &x| if x > a { x } else { a });
            }
            LogKernel::Fixed(_) => return (Vec::new(), 0),
        }
    }
    anneal_schedule(c_max, params.epsilon, params.max_iter)
}

pub(super) fn solve<T: Scalar>(
    input: &EnsembleInput<T>,
    params: &SolverParams<T>,
    mode: Mode,
    check_rows: bool,
) -> Result<RawSolution<T>> {
    let m = input.len();
    let big_m = input.target().len();
    let lambdas = input.lambdas();
    let log_lambdas: Vec<T> = lambdas.iter().map(|w| w.ln()).collect();

    let kernels: Vec<LogKernel<'_, T>> = input
        .kernels()
        .iter()
        .map(|gm| match (gm.cost(), gm.kernel()) {
            (Some(c), _) => LogKernel::Cost(c),
            (None, Some(k)) => LogKernel::Fixed(log_kernel(k)),
            (None, None) => unreachable!("ground metrics carry a cost or a kernel"),
        })
        .collect();
    let log_mu: Vec<Vec<T>> = input
        .models()
        .iter()
        .map(|h| {
            h.mass()
                .iter()
                .map(|&x| floor_at(x, T::KERNEL_FLOOR).ln())
                .collect()
        })
        .collect();

    let (mut stages, cap) = schedule(&kernels, params);
    let annealed_stages = stages.len();
    stages.push(params.epsilon);

    let mut alpha: Vec<Vec<T>> = log_mu.iter().map(|r| vec![T::zero(); r.len()]).collect();
    let mut beta: Vec<Vec<T>> = vec![vec![T::zero(); big_m]; m];
    let mut log_p = vec![T::zero(); big_m];
    let mut have_p = false;

    let mut alpha_next = alpha.clone();
    let mut s: Vec<Vec<T>> = vec![vec![T::zero(); big_m]; m];
    let mut log_p_next = vec![T::zero(); big_m];
    let mut row_buf: Vec<Vec<T>> = log_mu.iter().map(|r| vec![T::zero(); r.len()]).collect();

    let mut residual = T::infinity();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut prev_eps: Option<T> = None;

    for (stage, &eps) in stages.iter().enumerate() {
        let final_stage = stage == annealed_stages;
        if let Some(pe) = prev_eps {
            // keep potentials fixed in cost units across the epsilon change
            let r = pe / eps;
            alpha.iter_mut().flatten().for_each(|x| *x *= r);
            beta.iter_mut().flatten().for_each(|x| *x *= r);
        }
        prev_eps = Some(eps);
        let inv_eps = T::one() / eps;
        let (exp_a, exp_b) = match mode {
            Mode::Balanced => (T::one(), T::zero()),
            Mode::Unbalanced => {
                let d = params.kl_lambda + eps;
                (params.kl_lambda / d, eps / d)
            }
        };
        let omega = match (params.relaxation, mode) {
            (Some(w), _) => w,
            (None, Mode::Balanced) if annealed_stages > 0 => T::of(ANNEALED_BALANCED_RELAXATION),
            (None, Mode::Balanced) => T::one(),
            (None, Mode::Unbalanced) => optimal_relaxation(exp_a),
        };
        let budget = if final_stage {
            params.max_iter - iterations
        } else {
            cap
        };

        for _ in 0..budget {
            iterations += 1;
            let first = iterations == 1;
            let mut violation = T::zero();
            for l in 0..m {
                lse_rows(&kernels[l], inv_eps, &beta[l], &mut row_buf[l]);
                if check_rows && have_p {
                    let e: T = alpha[l]
                        .iter()
                        .zip(&row_buf[l])
                        .zip(input.models()[l].mass())
                        .map(|((&a, &k), &mu)| ((a + k).exp() - mu).abs())
                        .sum();
                    violation = violation.max(e);
                }
                for (((an, &ao), &lm), &kv) in alpha_next[l]
                    .iter_mut()
                    .zip(&alpha[l])
                    .zip(&log_mu[l])
                    .zip(&row_buf[l])
                {
                    let fresh = exp_a * (lm - kv);
                    *an = if first {
                        fresh
                    } else {
                        ao + omega * (fresh - ao)
                    };
                }
                lse_cols(&kernels[l], inv_eps, &alpha_next[l], &mut s[l]);
            }

            match mode {
                Mode::Balanced => {
                    log_p_next.iter_mut().for_each(|x| *x = T::zero());
                    for (row, &w) in s.iter().zip(lambdas) {
                        for (o, &x) in log_p_next.iter_mut().zip(row) {
                            *o += w * x;
                        }
                    }
                }
                Mode::Unbalanced => {
                    let inv_b = T::one() / exp_b;
                    for (j, o) in log_p_next.iter_mut().enumerate() {
                        let terms = (0..m).map(|l| log_lambdas[l] + exp_b * s[l][j]);
                        *o = log_sum_exp(terms) * inv_b;
                    }
                }
            }
            if log_p_next.iter().any(|x| x.is_nan() || *x == T::infinity()) {
                return Err(match mode {
                    Mode::Balanced => Error::DivisionUnderflow { model: 0 },
                    Mode::Unbalanced => Error::ExponentOverflow,
                });
            }

            if have_p && final_stage {
                residual = log_p_next
                    .iter()
                    .zip(&log_p)
                    .map(|(&a, &b)| (a.exp() - b.exp()).abs())
                    .sum();
                if residual <= params.tolerance && violation <= params.tolerance {
                    converged = true;
                    break;
                }
            }

            std::mem::swap(&mut alpha, &mut alpha_next);
            std::mem::swap(&mut log_p, &mut log_p_next);
            have_p = true;
            let mut max_shift = T::zero();
            for l in 0..m {
                for ((bj, &lp), &sj) in beta[l].iter_mut().zip(&log_p).zip(&s[l]) {
                    let fresh = exp_a * (lp - sj);
                    let next = if first {
                        fresh
                    } else {
                        *bj + omega * (fresh - *bj)
                    };
                    let shift = (next - *bj).abs();
                    if shift > max_shift {
                        max_shift = shift;
                    }
                    *bj = next;
                }
                if beta[l].iter().any(|x| x.is_nan()) {
                    return Err(Error::DivisionUnderflow { model: l });
                }
            }
            if !final_stage && max_shift <= T::of(STAGE_POTENTIAL_TOL) {
                break;
            }
        }
        if converged {
            break;
        }
    }

    let final_inv_eps = T::one() / params.epsilon;
    let couplings = params.keep_couplings.then(|| {
        kernels
            .iter()
            .enumerate()
            .map(|(l, k)| {
                Array2::from_shape_fn(k.dim(), |(i, j)| {
                    (alpha[l][i] + k.at(i, j, final_inv_eps) + beta[l][j]).exp()
                })
            })
            .collect()
    });

    Ok(RawSolution {
        p: log_p.iter().map(|x| x.exp()).collect(),
        couplings,
        iterations,
        residual,
        converged,
    })
}
