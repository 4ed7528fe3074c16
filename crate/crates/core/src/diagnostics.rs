//! Entropy, smoothness energy and executable versions of the barycenter
//! guarantees (distance to an oracle, diversity, controllable entropy).
//!
//! Every bound is stored as `lhs <= rhs`; lower bounds are flipped into that
//! form, so `satisfied == (lhs <= rhs + tol)` throughout.

use std::sync::Arc;

use crate::barycenter::BarycenterResult;
use crate::error::{Error, Result};
use crate::ground_metric::cost_from_embeddings;
use crate::measures::{EnsembleInput, Histogram, Support};
use crate::scalar::Scalar;
use crate::transport::{exact_ot_2bin, sinkhorn_distance};

/// Absolute slack of every bound check.
pub const BOUND_ABS_TOL: f64 = 1e-9;
/// Extra relative slack for bounds between Sinkhorn-approximated distances.
pub const BOUND_REL_TOL: f64 = 1e-6;
const SINKHORN_MAX_ITER: usize = 5000;
const SINKHORN_TOL: f64 = 1e-9;

/// How the squared Wasserstein distances of a report were evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistancePath {
    /// Closed-form two-bin optimal transport.
    Exact2Bin,
    /// Entropic OT at the requested epsilon.
    Sinkhorn,
    /// The report involves no transport distance.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck<T> {
    pub name: String,
    pub lhs: T,
    pub rhs: T,
    pub satisfied: bool,
}

impl<T: Scalar> BoundCheck<T> {
    fn new(name: impl Into<String>, lhs: T, rhs: T, tol: T) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: lhs <= rhs + tol,
        }
    }

    /// `rhs - lhs`; negative when the bound is violated.
    pub fn margin(&self) -> T {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport<T> {
    /// Entropy of the barycenter, in nats.
    pub entropy: T,
    /// Smoothness energy of the barycenter, when the support has points.
    pub smoothness_energy: Option<T>,
    pub per_model_entropies: Vec<T>,
    pub bound_checks: Vec<BoundCheck<T>>,
    pub distance_path: DistancePath,
}

impl<T: Scalar> DiagnosticsReport<T> {
    pub fn all_satisfied(&self) -> bool {
        self.bound_checks.iter().all(|c| c.satisfied)
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck<T>> {
        self.bound_checks.iter().find(|c| c.name == name)
    }
}

fn entropy_of<T: Scalar>(mass: impl IntoIterator<Item = T>) -> T {
    mass.into_iter()
        .filter(|&x| x > T::zero())
        .map(|x| -x * x.ln())
        .sum()
}

/// `-sum_i rho_i ln rho_i` with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(h: &Histogram<T>) -> Result<T> {
    if !h.sums_to_one(T::INPUT_NORM_TOL) {
        return Err(Error::NotNormalized);
    }
    Ok(entropy_of(h.mass().iter().copied()))
}

fn energy_on<T: Scalar>(points: &[Vec<T>], mass: &[T]) -> T {
    let mut e = T::zero();
    for (i, (xi, &ri)) in points.iter().zip(mass).enumerate() {
        for (xj, &rj) in points[i + 1..].iter().zip(&mass[i + 1..]) {
            let d: T = xi.iter().zip(xj).map(|(&a, &b)| (a - b) * (a - b)).sum();
            e += d * ri * rj;
        }
    }
    // each unordered pair appears twice in the full double sum
    e + e
}

/// `sum_ij |x_i - x_j|^2 rho_i rho_j` over both orderings of every pair.
pub fn smoothness_energy<T: Scalar>(h: &Histogram<T>) -> Result<T> {
    let points = h.support().points().ok_or(Error::MissingPoints)?;
    Ok(energy_on(points, h.mass()))
}

fn normalized_copy<T: Scalar>(h: &Histogram<T>) -> Result<Vec<T>> {
    let s = h.total_mass();
    if !(s > T::zero()) {
        return Err(Error::ZeroTotalMass);
    }
    Ok(h.mass().iter().map(|&x| x / s).collect())
}

struct SquaredW2<T: Scalar> {
    support: Arc<Support<T>>,
    cost: ndarray::Array2<T>,
    epsilon: T,
}

impl<T: Scalar> SquaredW2<T> {
    fn path(&self) -> DistancePath {
        if self.support.len() == 2 {
            DistancePath::Exact2Bin
        } else {
            DistancePath::Sinkhorn
        }
    }

    fn eval(&self, a: &[T], b: &[T]) -> Result<T> {
        if self.support.len() == 2 {
            return Ok(exact_ot_2bin([a[0], a[1]], [b[0], b[1]], &self.cost).0);
        }
        let wrap =
            |m: &[T]| Histogram::from_parts_unchecked(self.support.clone(), m.to_vec(), true);
        let gm = crate::ground_metric::GroundMetric::from_cost(
            self.support.clone(),
            self.support.clone(),
            self.cost.clone(),
        )?;
        let r = sinkhorn_distance(
            &wrap(a),
            &wrap(b),
            &gm,
            self.epsilon,
            SINKHORN_MAX_ITER,
            T::of(SINKHORN_TOL),
        )?;
        Ok(r.transport_cost)
    }
}

/// Evaluates the four barycenter guarantees against an oracle `nu`.
///
/// With squared euclidean ground cost between the support points:
/// 1. `W2(p, nu) <= 4 sum_l lambda_l W2(mu_l, nu)` (`"oracle"`),
/// 2. `W2(p, mu_k) <= sum_{l != k} lambda_l W2(mu_l, mu_k)` (`"model_k"`),
/// 3. `E(p) <= sum_l lambda_l E(mu_l)` (`"smoothness"`),
/// 4. `H(p) >= sum_l lambda_l H(mu_l)` (`"entropy"`, stored flipped).
///
/// `W2` is exact on two-bin supports and Sinkhorn at `ot_epsilon` otherwise;
/// Sinkhorn-based bounds get an extra relative slack of `1e-6`. The
/// barycenter is renormalized before evaluation.
pub fn check_prop1<T: Scalar>(
    result: &BarycenterResult<T>,
    models: &EnsembleInput<T>,
    oracle: &Histogram<T>,
    ot_epsilon: T,
) -> Result<DiagnosticsReport<T>> {
    let support = result.barycenter.support().clone();
    let points = support.points().ok_or(Error::MissingPoints)?;
    if oracle.len() != support.len() {
        return Err(Error::DimensionMismatch {
            expected: support.len(),
            found: oracle.len(),
        });
    }
    if !oracle.sums_to_one(T::INPUT_NORM_TOL) {
        return Err(Error::NotNormalized);
    }
    let mut mus = Vec::with_capacity(models.len());
    for (model, h) in models.models().iter().enumerate() {
        if h.len() != support.len() {
            return Err(Error::SupportMismatch);
        }
        if !h.sums_to_one(T::INPUT_NORM_TOL) {
            return Err(Error::NotNormalizedInput { model });
        }
        mus.push(h.mass());
    }
    let lambdas = models.lambdas();
    let p = normalized_copy(&result.barycenter)?;
    let nu = oracle.mass();

    let w2 = SquaredW2 {
        cost: cost_from_embeddings(support.clone(), support.clone(), false)?
            .cost()
            .expect("cost_from_embeddings sets the cost")
            .clone(),
        support: support.clone(),
        epsilon: ot_epsilon,
    };
    let path = w2.path();
    let abs = T::of(BOUND_ABS_TOL);
    let w_tol = |rhs: T| match path {
        DistancePath::Sinkhorn => abs + T::of(BOUND_REL_TOL) * rhs.abs(),
        _ => abs,
    };

    let mut checks = Vec::with_capacity(models.len() + 3);
    let lhs = w2.eval(&p, nu)?;
    let mut rhs = T::zero();
    for (mu, &w) in mus.iter().zip(lambdas) {
        rhs += w * w2.eval(mu, nu)?;
    }
    rhs *= T::of(4.0);
    checks.push(BoundCheck::new("oracle", lhs, rhs, w_tol(rhs)));

    for (k, mu_k) in mus.iter().enumerate() {
        let lhs = w2.eval(&p, mu_k)?;
        let mut rhs = T::zero();
        for (l, (mu, &w)) in mus.iter().zip(lambdas).enumerate() {
            if l != k {
                rhs += w * w2.eval(mu, mu_k)?;
            }
        }
        checks.push(BoundCheck::new(format!("model_{k}"), lhs, rhs, w_tol(rhs)));
    }

    let energy = energy_on(points, &p);
    let energy_rhs = mus
        .iter()
        .zip(lambdas)
        .map(|(mu, &w)| w * energy_on(points, mu))
        .sum();
    checks.push(BoundCheck::new("smoothness", energy, energy_rhs, abs));

    let h_p = entropy_of(p.iter().copied());
    let per_model: Vec<T> = mus
        .iter()
        .map(|mu| entropy_of(mu.iter().copied()))
        .collect();
    let h_mix = per_model.iter().zip(lambdas).map(|(&h, &w)| w * h).sum();
    checks.push(BoundCheck::new("entropy", h_mix, h_p, abs));

    Ok(DiagnosticsReport {
        entropy: h_p,
        smoothness_energy: Some(energy),
        per_model_entropies: per_model,
        bound_checks: checks,
        distance_path: path,
    })
}

/// Entropy of the coupling `gamma_l` against those of its marginals:
/// `-sum_ij gamma_ij ln gamma_ij <= H(p) + H(mu_l)` for every model
/// (`"coupling_l"`).
pub fn check_entropy_lemma<T: Scalar>(
    result: &BarycenterResult<T>,
    models: &EnsembleInput<T>,
) -> Result<DiagnosticsReport<T>> {
    let couplings = result.couplings.as_ref().ok_or(Error::MissingCouplings)?;
    let h_p = entropy_of(result.barycenter.mass().iter().copied());
    let per_model: Vec<T> = models
        .models()
        .iter()
        .map(|h| entropy_of(h.mass().iter().copied()))
        .collect();
    let checks = couplings
        .iter()
        .zip(&per_model)
        .enumerate()
        .map(|(l, (c, &h_mu))| {
            let h_gamma = entropy_of(c.matrix.iter().copied());
            BoundCheck::new(
                format!("coupling_{l}"),
                h_gamma,
                h_p + h_mu,
                T::of(BOUND_ABS_TOL),
            )
        })
        .collect();
    let smoothness_energy = result
        .barycenter
        .support()
        .points()
        .map(|pts| energy_on(pts, result.barycenter.mass()));
    Ok(DiagnosticsReport {
        entropy: h_p,
        smoothness_energy,
        per_model_entropies: per_model,
        bound_checks: checks,
        distance_path: DistancePath::None,
    })
}

/// Entropy of each coupling of a result.
pub fn coupling_entropies<T: Scalar>(result: &BarycenterResult<T>) -> Result<Vec<T>> {
    let couplings = result.couplings.as_ref().ok_or(Error::MissingCouplings)?;
    Ok(couplings
        .iter()
        .map(|c| entropy_of(c.matrix.iter().copied()))
        .collect())
}
