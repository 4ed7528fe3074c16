//! Closed-form Frechet means: arithmetic (squared euclidean) and geometric
//! (extended KL), plus performance-based ensemble weights.

use crate::error::{Error, Result};
use crate::measures::{normalize, Ensemble, EnsembleWeights, Histogram};
use crate::scalar::Scalar;

/// Zero handling and output normalization for the geometric mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanOptions<T> {
    pub renormalize_output: bool,
    /// Entries below this value are raised to it before taking logs.
    pub zero_floor: T,
}

impl<T: Scalar> Default for MeanOptions<T> {
    fn default() -> Self {
        Self {
            renormalize_output: false,
            zero_floor: T::of(1e-12),
        }
    }
}

/// `sum_l lambda_l * mu_l`, bin by bin.
pub fn arithmetic_mean<T: Scalar>(ensemble: &Ensemble<T>) -> Result<Histogram<T>> {
    let support = ensemble.shared_support()?.clone();
    let n = support.len();
    let mut out = vec![T::zero(); n];
    for (h, &w) in ensemble.models().iter().zip(ensemble.lambdas()) {
        for (o, &x) in out.iter_mut().zip(h.mass()) {
            *o += w * x;
        }
    }
    let normalized = ensemble.models().iter().all(Histogram::is_normalized);
    Ok(Histogram::from_parts_unchecked(support, out, normalized))
}

/// `exp(sum_l lambda_l * ln(x_l))` evaluated model by model in a fixed order.
///
/// The balanced barycenter solver combines its `K^T u` vectors through this
/// same routine, which is what makes the identity-kernel fixed point agree
/// bit for bit with [`geometric_mean`].
pub(crate) fn weighted_log_mean<'a, T: Scalar>(
    rows: impl Iterator<Item = &'a [T]>,
    lambdas: &[T],
    floor: T,
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (row, &w) in rows.zip(lambdas) {
        for (o, &x) in out.iter_mut().zip(row) {
            let x = if x < floor { floor } else { x };
            *o += w * x.ln();
        }
    }
}

/// `prod_l mu_l^lambda_l`, bin by bin.
pub fn geometric_mean<T: Scalar>(
    ensemble: &Ensemble<T>,
    opts: &MeanOptions<T>,
) -> Result<Histogram<T>> {
    if !(opts.zero_floor >= T::zero()) {
        return Err(Error::InvalidParameter(
            "zero_floor must be nonnegative".into(),
        ));
    }
    let support = ensemble.shared_support()?.clone();
    let mut log_mean = vec![T::zero(); support.len()];
    weighted_log_mean(
        ensemble.models().iter().map(Histogram::mass),
        ensemble.lambdas(),
        opts.zero_floor,
        &mut log_mean,
    );
    let out = log_mean.into_iter().map(T::exp).collect();
    let h = Histogram::from_parts_unchecked(support, out, false);
    if opts.renormalize_output {
        normalize(h)
    } else {
        Ok(h)
    }
}

/// `lambda_l = score_l / sum(score)`, e.g. from per-model mAP.
pub fn performance_weights<T: Scalar>(scores: &[T]) -> Result<EnsembleWeights<T>> {
    if scores.is_empty() {
        return Err(Error::InvalidWeights("no scores".into()));
    }
    if let Some((index, &s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(**s > T::zero()) || !s.is_finite())
    {
        return Err(Error::NonPositiveScore {
            index,
            value: s.as_f64(),
        });
    }
    let total: T = scores.iter().copied().sum();
    EnsembleWeights::new(scores.iter().map(|&s| s / total).collect())
}

/// Extended KL divergence `sum p log(p/q) - p + q` between nonnegative vectors.
pub fn extended_kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let plogp = if a > T::zero() {
                a * (a / b).ln()
            } else {
                T::zero()
            };
            plogp - a + b
        })
        .sum()
}

pub fn squared_l2<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

pub fn l1_distance<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::measures::Support;

    fn ens(models: &[&[f64]], lambdas: &[f64]) -> Ensemble<f64> {
        let s = Arc::new(Support::indexed(models[0].len()));
        let hs = models
            .iter()
            .map(|m| Histogram::new(s.clone(), m.to_vec(), false).unwrap())
            .collect();
        Ensemble::new(hs, EnsembleWeights::new(lambdas.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn arithmetic_examples() {
        let e = ens(&[&[0.8, 0.2], &[0.2, 0.8]], &[0.5, 0.5]);
        assert_eq!(arithmetic_mean(&e).unwrap().mass(), &[0.5, 0.5]);
        let e = ens(&[&[0.3, 0.7]], &[1.0]);
        assert_eq!(arithmetic_mean(&e).unwrap().mass(), &[0.3, 0.7]);
    }

    #[test]
    fn geometric_examples() {
        let e = ens(&[&[0.8, 0.2], &[0.2, 0.8]], &[0.5, 0.5]);
        let g = geometric_mean(&e, &MeanOptions::default()).unwrap();
        for x in g.mass() {
            assert!((x - 0.4).abs() < 1e-15);
        }
        assert!(!g.is_normalized());
        let opts = MeanOptions {
            renormalize_output: true,
            ..MeanOptions::default()
        };
        let g = geometric_mean(&e, &opts).unwrap();
        for x in g.mass() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        let e = ens(&[&[0.1, 0.6, 0.3], &[0.1, 0.6, 0.3]], &[0.25, 0.75]);
        let g = geometric_mean(&e, &MeanOptions::default()).unwrap();
        for (x, y) in g.mass().iter().zip([0.1, 0.6, 0.3]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_zero_floor() {
        let e = ens(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.5, 0.5]);
        let g = geometric_mean(&e, &MeanOptions::default()).unwrap();
        assert!((g.mass()[0] - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn performance_weight_examples() {
        let w = performance_weights(&[0.5, 0.5]).unwrap();
        assert_eq!(w.lambdas(), &[0.5, 0.5]);
        let w = performance_weights(&[63.3_f64, 64.1]).unwrap();
        assert!((w.lambdas()[0] - 0.49686).abs() < 1e-5);
        assert!((w.lambdas()[1] - 0.50314).abs() < 1e-5);
        let w = performance_weights(&[1.0_f64, 2.0, 3.0]).unwrap();
        for (x, y) in w.lambdas().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            performance_weights(&[1.0, 0.0]),
            Err(Error::NonPositiveScore { index: 1, .. })
        ));
    }

    #[test]
    fn support_mismatch() {
        let a = Histogram::from_mass(vec![0.5, 0.5], true).unwrap();
        let b = Histogram::from_mass(vec![0.5, 0.5], true).unwrap();
        let e = Ensemble::uniform(vec![a, b]).unwrap();
        // two separately built indexed supports compare equal by value
        assert!(arithmetic_mean(&e).is_ok());
        let c = Histogram::from_mass(vec![1.0 / 3.0; 3], true).unwrap();
        let d = Histogram::from_mass(vec![0.5, 0.5], true).unwrap();
        let e = Ensemble::uniform(vec![c, d]).unwrap();
        assert_eq!(arithmetic_mean(&e).unwrap_err(), Error::SupportMismatch);
        assert_eq!(
            geometric_mean(&e, &MeanOptions::default()).unwrap_err(),
            Error::SupportMismatch
        );
    }

    #[test]
    fn divergences() {
        assert_eq!(extended_kl(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((extended_kl(&[1.0], &[2.0]) - (0.5f64.ln() + 1.0)).abs() < 1e-15);
        assert_eq!(squared_l2(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        assert_eq!(l1_distance(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
    }
}
