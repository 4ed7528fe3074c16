//! Supports, histograms and ensemble inputs.
//!
//! Everything here is an immutable value once constructed. Histograms hold
//! their support behind an [`Arc`] so that many models (and the kernels that
//! connect them) can refer to one set of labels without copying it.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ground_metric::GroundMetric;
use crate::scalar::Scalar;

/// Labeled bins, optionally embedded in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support<T> {
    labels: Vec<String>,
    points: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Support<T> {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self {
            labels,
            points: None,
        })
    }

    /// Support with labels `"0"`, `"1"`, ... and no embedding.
    pub fn indexed(n: usize) -> Self {
        Self {
            labels: (0..n).map(|i| i.to_string()).collect(),
            points: None,
        }
    }

    /// Attach embedding coordinates, one vector per label.
    pub fn with_points(mut self, points: Vec<Vec<T>>) -> Result<Self> {
        if points.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                found: points.len(),
            });
        }
        let dim = points.first().map_or(0, Vec::len);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NaNEntry { index: i });
            }
        }
        self.points = Some(points);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn points(&self) -> Option<&[Vec<T>]> {
        self.points.as_deref()
    }

    /// Embedding dimension, if points are attached.
    pub fn dim(&self) -> Option<usize> {
        self.points.as_ref().map(|p| p.first().map_or(0, Vec::len))
    }
}

/// Two supports are interchangeable when they are the same allocation or
/// carry equal labels and points.
pub(crate) fn same_support<T: Scalar>(a: &Arc<Support<T>>, b: &Arc<Support<T>>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Nonnegative mass over a support.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<T> {
    support: Arc<Support<T>>,
    mass: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> Histogram<T> {
    /// Build and validate a histogram.
    pub fn new(support: Arc<Support<T>>, mass: Vec<T>, normalized: bool) -> Result<Self> {
        validate(Self {
            support,
            mass,
            normalized,
        })
    }

    /// Histogram on an anonymous indexed support.
    pub fn from_mass(mass: Vec<T>, normalized: bool) -> Result<Self> {
        let support = Arc::new(Support::indexed(mass.len()));
        Self::new(support, mass, normalized)
    }

    pub(crate) fn from_parts_unchecked(
        support: Arc<Support<T>>,
        mass: Vec<T>,
        normalized: bool,
    ) -> Self {
        Self {
            support,
            mass,
            normalized,
        }
    }

    pub fn support(&self) -> &Arc<Support<T>> {
        &self.support
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<T> {
        self.mass
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.mass.iter().copied().sum()
    }

    /// True when `|sum - 1|` is within the given tolerance.
    pub fn sums_to_one(&self, tol: T) -> bool {
        (self.total_mass() - T::one()).abs() <= tol
    }
}

/// Check the histogram invariants, returning the histogram untouched.
pub fn validate<T: Scalar>(h: Histogram<T>) -> Result<Histogram<T>> {
    if h.mass.len() != h.support.len() {
        return Err(Error::LengthMismatch {
            mass: h.mass.len(),
            support: h.support.len(),
        });
    }
    for (index, &x) in h.mass.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NaNEntry { index });
        }
        if x < T::zero() {
            return Err(Error::NegativeMass {
                index,
                value: x.as_f64(),
            });
        }
    }
    if h.normalized && !h.sums_to_one(T::INPUT_NORM_TOL) {
        return Err(Error::NormalizationMismatch {
            sum: h.total_mass().as_f64(),
        });
    }
    Ok(h)
}

/// Rescale to unit total mass.
///
/// A histogram already flagged normalized (and summing to one within the
/// internal tolerance) is returned as is, which makes the operation exactly
/// idempotent.
pub fn normalize<T: Scalar>(h: Histogram<T>) -> Result<Histogram<T>> {
    if h.normalized && h.sums_to_one(T::INTERNAL_NORM_TOL) {
        return Ok(h);
    }
    let total = h.total_mass();
    if !(total > T::zero()) {
        return Err(Error::ZeroTotalMass);
    }
    let mass = h.mass.iter().map(|&x| x / total).collect();
    Ok(Histogram {
        support: h.support,
        mass,
        normalized: true,
    })
}

/// Strictly positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights<T> {
    lambdas: Vec<T>,
}

impl<T: Scalar> EnsembleWeights<T> {
    pub fn new(lambdas: Vec<T>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some((i, w)) = lambdas
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w > T::zero()) || !w.is_finite())
        {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is {w}, must be positive"
            )));
        }
        let sum: T = lambdas.iter().copied().sum();
        if (sum - T::one()).abs() > T::WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { lambdas })
    }

    /// `1/m` for each of `m` models.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        let w = T::one() / T::of(m as f64);
        Self::new(vec![w; m])
    }

    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Model predictions with their weights, all on one support.
#[derive(Debug, Clone)]
pub struct Ensemble<T> {
    models: Vec<Histogram<T>>,
    weights: EnsembleWeights<T>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(models: Vec<Histogram<T>>, weights: EnsembleWeights<T>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter(
                "an ensemble needs at least one model".into(),
            ));
        }
        if models.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} models",
                weights.len(),
                models.len()
            )));
        }
        Ok(Self { models, weights })
    }

    /// Uniformly weighted ensemble.
    pub fn uniform(models: Vec<Histogram<T>>) -> Result<Self> {
        let w = EnsembleWeights::uniform(models.len())?;
        Self::new(models, w)
    }

    pub fn models(&self) -> &[Histogram<T>] {
        &self.models
    }

    pub fn weights(&self) -> &EnsembleWeights<T> {
        &self.weights
    }

    pub fn lambdas(&self) -> &[T] {
        self.weights.lambdas()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// The support shared by every model, or `SupportMismatch`.
    pub fn shared_support(&self) -> Result<&Arc<Support<T>>> {
        let first = self.models[0].support();
        if self.models[1..]
            .iter()
            .all(|h| same_support(h.support(), first))
        {
            Ok(first)
        } else {
            Err(Error::SupportMismatch)
        }
    }
}

/// An ensemble together with one kernel per model, all mapping into a
/// common target support.
#[derive(Debug, Clone)]
pub struct EnsembleInput<T> {
    ensemble: Ensemble<T>,
    kernels: Vec<Arc<GroundMetric<T>>>,
}

impl<T: Scalar> EnsembleInput<T> {
    pub fn new(ensemble: Ensemble<T>, kernels: Vec<Arc<GroundMetric<T>>>) -> Result<Self> {
        if kernels.len() != ensemble.len() {
            return Err(Error::InvalidParameter(format!(
                "{} kernels for {} models",
                kernels.len(),
                ensemble.len()
            )));
        }
        let target = kernels[0].target();
        for (model, k) in ensemble.models().iter().zip(&kernels) {
            if !same_support(k.source(), model.support()) || !same_support(k.target(), target) {
                return Err(Error::SupportMismatch);
            }
        }
        Ok(Self { ensemble, kernels })
    }

    /// Every model uses the same kernel.
    pub fn with_shared_kernel(ensemble: Ensemble<T>, kernel: Arc<GroundMetric<T>>) -> Result<Self> {
        let kernels = vec![kernel; ensemble.len()];
        Self::new(ensemble, kernels)
    }

    pub fn ensemble(&self) -> &Ensemble<T> {
        &self.ensemble
    }

    pub fn models(&self) -> &[Histogram<T>] {
        self.ensemble.models()
    }

    pub fn lambdas(&self) -> &[T] {
        self.ensemble.lambdas()
    }

    pub fn kernels(&self) -> &[Arc<GroundMetric<T>>] {
        &self.kernels
    }

    pub fn target(&self) -> &Arc<Support<T>> {
        self.kernels[0].target()
    }

    pub fn len(&self) -> usize {
        self.ensemble.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ensemble.is_empty()
    }
}
