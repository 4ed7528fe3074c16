//! Scaling-vector path: plain matrix-vector products with the kernels.

use std::sync::Arc;

use ndarray::Array2;

use super::{Mode, RawSolution, SolverParams};
use crate::error::{Error, Result};
use crate::frechet::weighted_log_mean;
use crate::measures::EnsembleInput;
use crate::scalar::{floor_at, Scalar};

/// `out = K v`, floored.
fn kernel_times<T: Scalar>(k: &Array2<T>, v: &[T], out: &mut [T]) {
    for (o, row) in out.iter_mut().zip(k.rows()) {
        let s = row
            .iter()
            .zip(v)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        *o = floor_at(s, T::KERNEL_FLOOR);
    }
}

/// `out = K^T u`, floored. Rows are accumulated in index order.
fn kernel_t_times<T: Scalar>(k: &Array2<T>, u: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (row, &ui) in k.rows().into_iter().zip(u) {
        for (o, &kij) in out.iter_mut().zip(row) {
            *o += kij * ui;
        }
    }
    out.iter_mut()
        .for_each(|o| *o = floor_at(*o, T::KERNEL_FLOOR));
}

fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// `x_old^(1 - w) * x_new^w`, the multiplicative form of over-relaxation.
#[inline]
fn relax<T: Scalar>(old: T, new: T, w: T) -> T {
    if w == T::one() {
        new
    } else {
        old.powf(T::one() - w) * new.powf(w)
    }
}

pub(super) fn solve<T: Scalar>(
    input: &EnsembleInput<T>,
    kernels: &[Arc<Array2<T>>],
    params: &SolverParams<T>,
    mode: Mode,
    check_rows: bool,
) -> Result<RawSolution<T>> {
    let m = input.len();
    let lambdas = input.lambdas();
    let big_m = input.target().len();
    let mus: Vec<&[T]> = input.models().iter().map(|h| h.mass()).collect();

    let (exp_a, exp_b) = match mode {
        Mode::Balanced => (T::one(), T::zero()),
        Mode::Unbalanced => {
            let denom = params.kl_lambda + params.epsilon;
            (params.kl_lambda / denom, params.epsilon / denom)
        }
    };
    let omega = params.relaxation.unwrap_or(T::one());

    let mut u: Vec<Vec<T>> = mus.iter().map(|mu| vec![T::one(); mu.len()]).collect();
    let mut v: Vec<Vec<T>> = vec![vec![T::one(); big_m]; m];
    let mut p = vec![T::zero(); big_m];

    let mut u_next = u.clone();
    let mut ktu: Vec<Vec<T>> = vec![vec![T::zero(); big_m]; m];
    let mut p_next = vec![T::zero(); big_m];
    let mut kv_buf: Vec<Vec<T>> = mus.iter().map(|mu| vec![T::zero(); mu.len()]).collect();

    let mut residual = T::infinity();
    let mut converged = false;
    let mut iterations = 0;

    for sweep in 1..=params.max_iter {
        iterations = sweep;
        // l1 violation of the row marginals by the state this sweep starts from
        let mut violation = T::zero();
        for l in 0..m {
            kernel_times(&kernels[l], &v[l], &mut kv_buf[l]);
            if check_rows && sweep > 1 {
                let e: T = u[l]
                    .iter()
                    .zip(&kv_buf[l])
                    .zip(mus[l])
                    .map(|((&ui, &kv), &mu)| (ui * kv - mu).abs())
                    .sum();
                violation = violation.max(e);
            }
            for ((un, &uo), (&mu, &kv)) in u_next[l]
                .iter_mut()
                .zip(&u[l])
                .zip(mus[l].iter().zip(&kv_buf[l]))
            {
                let ratio = mu / kv;
                let fresh = if exp_a == T::one() {
                    ratio
                } else {
                    ratio.powf(exp_a)
                };
                *un = if sweep == 1 {
                    fresh
                } else {
                    relax(uo, fresh, omega)
                };
            }
            if !all_finite(&u_next[l]) {
                return Err(Error::DivisionUnderflow { model: l });
            }
            kernel_t_times(&kernels[l], &u_next[l], &mut ktu[l]);
        }

        match mode {
            Mode::Balanced => {
                weighted_log_mean(
                    ktu.iter().map(Vec::as_slice),
                    lambdas,
                    T::KERNEL_FLOOR,
                    &mut p_next,
                );
                p_next.iter_mut().for_each(|x| *x = x.exp());
                if !all_finite(&p_next) {
                    return Err(Error::DivisionUnderflow { model: 0 });
                }
            }
            Mode::Unbalanced => {
                p_next.iter_mut().for_each(|x| *x = T::zero());
                for (row, &w) in ktu.iter().zip(lambdas) {
                    for (o, &x) in p_next.iter_mut().zip(row) {
                        *o += w * x.powf(exp_b);
                    }
                }
                let inv_b = T::one() / exp_b;
                p_next.iter_mut().for_each(|x| *x = x.powf(inv_b));
                if !all_finite(&p_next) {
                    return Err(Error::ExponentOverflow);
                }
            }
        }

        if sweep > 1 {
            residual = p_next.iter().zip(&p).map(|(&a, &b)| (a - b).abs()).sum();
            if residual <= params.tolerance && violation <= params.tolerance {
                converged = true;
                break;
            }
        }

        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut p, &mut p_next);
        for l in 0..m {
            for ((vj, &pj), &kj) in v[l].iter_mut().zip(&p).zip(&ktu[l]) {
                let ratio = pj / kj;
                let fresh = if exp_a == T::one() {
                    ratio
                } else {
                    ratio.powf(exp_a)
                };
                *vj = if sweep == 1 {
                    fresh
                } else {
                    relax(*vj, fresh, omega)
                };
            }
            if !all_finite(&v[l]) {
                return Err(Error::DivisionUnderflow { model: l });
            }
        }
    }

    let couplings = params.keep_couplings.then(|| {
        (0..m)
            .map(|l| {
                let k = &kernels[l];
                Array2::from_shape_fn(k.dim(), |(i, j)| u[l][i] * k[(i, j)] * v[l][j])
            })
            .collect()
    });

    Ok(RawSolution {
        p,
        couplings,
        iterations,
        residual,
        converged,
    })
}
