//! Regularized OT distances and exact two-bin oracles.

use ndarray::Array2;

use crate::barycenter::log_domain::{
    anneal_schedule, lse_cols, lse_rows, LogKernel, STAGE_POTENTIAL_TOL,
};
use crate::barycenter::Coupling;
use crate::error::{Error, Result};
use crate::ground_metric::GroundMetric;
use crate::measures::Histogram;
use crate::scalar::{floor_at, Scalar};

/// Grid resolution of [`exact_barycenter_2bin`].
pub const BARYCENTER_GRID: usize = 100_000;

#[derive(Debug, Clone)]
pub struct OTResult<T> {
    /// Primal cost `<C, gamma>` (no entropy term).
    pub transport_cost: T,
    pub coupling: Coupling<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Entropic OT between normalized histograms.
///
/// Runs the alternating updates `u = p / (K v)`, `v = q / (K^T u)` in log
/// space; for cost-based metrics epsilon is annealed from the cost scale down
/// to `epsilon`. Convergence is measured as the l1 violation of the `p`
/// marginal. Hitting `max_iter` is not an error: the result is returned with
/// `converged = false`.
pub fn sinkhorn_distance<T: Scalar>(
    p: &Histogram<T>,
    q: &Histogram<T>,
    gm: &GroundMetric<T>,
    epsilon: T,
    max_iter: usize,
    tol: T,
) -> Result<OTResult<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter(
            "max_iter must be at least 1".into(),
        ));
    }
    for h in [p, q] {
        if !h.sums_to_one(T::INPUT_NORM_TOL) {
            return Err(Error::NotNormalized);
        }
    }
    let (rows, cols) = match (gm.cost(), gm.kernel()) {
        (Some(c), _) => c.dim(),
        (None, Some(k)) => k.dim(),
        (None, None) => unreachable!("ground metrics carry a cost or a kernel"),
    };
    if p.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: p.len(),
        });
    }
    if q.len() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            found: q.len(),
        });
    }

    let derived_cost;
    let (kernel, cost, mut stages, cap) = match gm.cost() {
        Some(c) => {
            let c_max = c.iter().fold(T::zero(), |a, &x| if x > a { x } else { a });
            let (stages, cap) = anneal_schedule(c_max, epsilon, max_iter);
            (LogKernel::Cost(c), c, stages, cap)
        }
        None => {
            if let Some(e) = gm.epsilon() {
                if (e - epsilon).abs() > T::of(1e-12) * e.max(epsilon) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel was built with epsilon {e} but the distance uses {epsilon}"
                    )));
                }
            }
            let log_k = gm
                .kernel()
                .expect("checked above")
                .mapv(|x| floor_at(x, T::KERNEL_FLOOR).ln());
            derived_cost = log_k.mapv(|x| -epsilon * x);
            (LogKernel::Fixed(log_k), &derived_cost, Vec::new(), 0)
        }
    };
    let annealed = stages.len();
    stages.push(epsilon);

    let log_p: Vec<T> = p
        .mass()
        .iter()
        .map(|&x| floor_at(x, T::KERNEL_FLOOR).ln())
        .collect();
    let log_q: Vec<T> = q
        .mass()
        .iter()
        .map(|&x| floor_at(x, T::KERNEL_FLOOR).ln())
        .collect();
    let mut f = vec![T::zero(); rows];
    let mut g = vec![T::zero(); cols];
    let mut buf_r = vec![T::zero(); rows];
    let mut buf_c = vec![T::zero(); cols];
    let mut iterations = 0;
    let mut converged = false;
    let mut prev_eps: Option<T> = None;

    for (stage, &eps) in stages.iter().enumerate() {
        let final_stage = stage == annealed;
        if let Some(pe) = prev_eps {
            let r = pe / eps;
            f.iter_mut().chain(g.iter_mut()).for_each(|x| *x *= r);
        }
        prev_eps = Some(eps);
        let inv_eps = T::one() / eps;
        let budget = if final_stage {
            max_iter - iterations
        } else {
            cap
        };
        for _ in 0..budget {
            iterations += 1;
            lse_rows(&kernel, inv_eps, &g, &mut buf_r);
            for ((fi, &lp), &k) in f.iter_mut().zip(&log_p).zip(&buf_r) {
                *fi = lp - k;
            }
            lse_cols(&kernel, inv_eps, &f, &mut buf_c);
            let mut shift = T::zero();
            for ((gj, &lq), &k) in g.iter_mut().zip(&log_q).zip(&buf_c) {
                let next = lq - k;
                shift = shift.max((next - *gj).abs());
                *gj = next;
            }
            if final_stage {
                lse_rows(&kernel, inv_eps, &g, &mut buf_r);
                let violation: T = f
                    .iter()
                    .zip(&buf_r)
                    .zip(p.mass())
                    .map(|((&fi, &k), &pi)| ((fi + k).exp() - pi).abs())
                    .sum();
                if violation <= tol {
                    converged = true;
                    break;
                }
            } else if shift <= T::of(STAGE_POTENTIAL_TOL) {
                break;
            }
        }
        if converged {
            break;
        }
    }

    let inv_eps = T::one() / epsilon;
    let matrix = Array2::from_shape_fn((rows, cols), |(i, j)| {
        (f[i] + kernel.at(i, j, inv_eps) + g[j]).exp()
    });
    let transport_cost = matrix
        .iter()
        .zip(cost.iter())
        .map(|(&gm, &c)| gm * c)
        .sum::<T>()
        .max(T::zero());
    Ok(OTResult {
        transport_cost,
        coupling: Coupling { matrix },
        iterations,
        converged,
    })
}

/// Exact OT between two-bin histograms.
///
/// The coupling has one free entry `g = gamma_11` on
/// `[max(0, p1 + q1 - 1), min(p1, q1)]` and the cost is linear in it, so the
/// optimum sits at an endpoint.
pub fn exact_ot_2bin<T: Scalar>(p: [T; 2], q: [T; 2], cost: &Array2<T>) -> (T, Array2<T>) {
    let lo = (p[0] + q[0] - T::one()).max(T::zero());
    let hi = p[0].min(q[0]);
    let plan = |g: T| {
        Array2::from_shape_vec(
            (2, 2),
            vec![g, p[0] - g, q[0] - g, (p[1] - q[0] + g).max(T::zero())],
        )
        .expect("2x2 shape")
    };
    let slope = cost[(0, 0)] - cost[(0, 1)] - cost[(1, 0)] + cost[(1, 1)];
    let g = if slope > T::zero() { lo } else { hi };
    let gamma = plan(g);
    let value = gamma.iter().zip(cost.iter()).map(|(&a, &c)| a * c).sum();
    (value, gamma)
}

fn barycenter_objective<T: Scalar>(rho1: T, mus: &[[T; 2]], lambdas: &[T], cost: &Array2<T>) -> T {
    let rho = [rho1, T::one() - rho1];
    mus.iter()
        .zip(lambdas)
        .map(|(&mu, &w)| w * exact_ot_2bin(rho, mu, cost).0)
        .sum()
}

/// Exact two-bin Wasserstein barycenter on the grid `rho1 in {0, 1/G, ..., 1}`.
///
/// Returns the grid minimizer of `sum_l lambda_l W(rho, mu_l)`, lowest `rho1`
/// on ties. The objective is convex and piecewise linear in `rho1` with kinks
/// at the `mu_l1`, so only the endpoints and the grid neighbours of each kink
/// need evaluating; the result equals a full scan of the grid.
pub fn exact_barycenter_2bin<T: Scalar>(
    mus: &[[T; 2]],
    lambdas: &[T],
    cost: &Array2<T>,
) -> Result<[T; 2]> {
    if mus.is_empty() {
        return Err(Error::EmptyPosteriors);
    }
    if mus.len() != lambdas.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} models",
            lambdas.len(),
            mus.len()
        )));
    }
    let grid = BARYCENTER_GRID;
    let gf = T::of(grid as f64);
    let mut candidates = vec![0, grid];
    for mu in mus {
        let x = (mu[0] * gf).to_f64().unwrap_or(0.0);
        for k in [x.floor(), x.ceil()] {
            candidates.push((k.max(0.0) as usize).min(grid));
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut best = (T::infinity(), 0);
    for k in candidates {
        let v = barycenter_objective(T::of(k as f64) / gf, mus, lambdas, cost);
        if v < best.0 {
            best = (v, k);
        }
    }
    let rho1 = T::of(best.1 as f64) / gf;
    Ok([rho1, T::one() - rho1])
}
