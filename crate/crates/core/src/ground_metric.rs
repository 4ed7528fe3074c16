//! Cost matrices and kernels between a source and a target support.
//!
//! A [`GroundMetric`] carries a cost matrix, a kernel, or both. Kernels built
//! from a cost are `exp(-cost / epsilon)`; kernels can also be given directly
//! (similarity graphs, attribute tables, per-sample diagonal kernels). Every
//! stored kernel entry is at least [`Scalar::KERNEL_FLOOR`].

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::Support;
use crate::scalar::{floor_at, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric<T> {
    source: Arc<Support<T>>,
    target: Arc<Support<T>>,
    cost: Option<Array2<T>>,
    kernel: Option<Array2<T>>,
    epsilon: Option<T>,
}

/// Parameters of the per-sample diagonal kernel used for multi-label ensembling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalKernelParams<T> {
    pub top_n: usize,
    pub floor_zeta: T,
}

impl<T: Scalar> DiagonalKernelParams<T> {
    pub fn new(top_n: usize, floor_zeta: T) -> Result<Self> {
        if top_n == 0 {
            return Err(Error::InvalidParameter("top_n must be at least 1".into()));
        }
        if !(floor_zeta > T::zero()) || !floor_zeta.is_finite() {
            return Err(Error::InvalidParameter("zeta must be positive".into()));
        }
        Ok(Self { top_n, floor_zeta })
    }
}

fn check_shape<T>(rows: usize, cols: usize, m: &Array2<T>) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            found: m.ncols(),
        });
    }
    Ok(())
}

impl<T: Scalar> GroundMetric<T> {
    /// Cost-only metric; entries must be finite and nonnegative.
    pub fn from_cost(
        source: Arc<Support<T>>,
        target: Arc<Support<T>>,
        cost: Array2<T>,
    ) -> Result<Self> {
        check_shape(source.len(), target.len(), &cost)?;
        for (index, &c) in cost.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NaNEntry { index });
            }
            if c < T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "cost entry {index} is negative"
                )));
            }
        }
        Ok(Self {
            source,
            target,
            cost: Some(cost),
            kernel: None,
            epsilon: None,
        })
    }

    /// Directly specified kernel. Zero entries are raised to the kernel floor.
    pub fn from_kernel(
        source: Arc<Support<T>>,
        target: Arc<Support<T>>,
        kernel: Array2<T>,
    ) -> Result<Self> {
        check_shape(source.len(), target.len(), &kernel)?;
        for (index, &k) in kernel.iter().enumerate() {
            if !k.is_finite() {
                return Err(Error::NaNEntry { index });
            }
            if k < T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "kernel entry {index} is negative"
                )));
            }
        }
        let kernel = kernel.mapv(|k| floor_at(k, T::KERNEL_FLOOR));
        Ok(Self {
            source,
            target,
            cost: None,
            kernel: Some(kernel),
            epsilon: None,
        })
    }

    /// Identity kernel on one support (off-diagonal at the floor).
    pub fn identity(support: Arc<Support<T>>) -> Self {
        let n = support.len();
        let kernel = Array2::from_shape_fn(
            (n, n),
            |(i, j)| {
                if i == j {
                    T::one()
                } else {
                    T::KERNEL_FLOOR
                }
            },
        );
        Self {
            source: support.clone(),
            target: support,
            cost: None,
            kernel: Some(kernel),
            epsilon: None,
        }
    }

    pub fn source(&self) -> &Arc<Support<T>> {
        &self.source
    }

    pub fn target(&self) -> &Arc<Support<T>> {
        &self.target
    }

    pub fn cost(&self) -> Option<&Array2<T>> {
        self.cost.as_ref()
    }

    pub fn kernel(&self) -> Option<&Array2<T>> {
        self.kernel.as_ref()
    }

    pub fn epsilon(&self) -> Option<T> {
        self.epsilon
    }

    pub fn is_square(&self) -> bool {
        self.source.len() == self.target.len()
    }

    /// `||K - I||_F` for square kernels.
    pub fn distance_to_identity(&self) -> Option<T> {
        let k = self.kernel.as_ref()?;
        if !self.is_square() {
            return None;
        }
        let s: T = k
            .indexed_iter()
            .map(|((i, j), &x)| {
                let d = if i == j { x - T::one() } else { x };
                d * d
            })
            .sum();
        Some(s.sqrt())
    }
}

/// Squared euclidean distances between the embedded points of two supports,
/// optionally after scaling every vector to unit length.
pub fn cost_from_embeddings<T: Scalar>(
    source: Arc<Support<T>>,
    target: Arc<Support<T>>,
    normalize_vectors: bool,
) -> Result<GroundMetric<T>> {
    let xs = source.points().ok_or(Error::MissingPoints)?;
    let ys = target.points().ok_or(Error::MissingPoints)?;
    let (dx, dy) = (source.dim().unwrap_or(0), target.dim().unwrap_or(0));
    if dx != dy {
        return Err(Error::DimensionMismatch {
            expected: dx,
            found: dy,
        });
    }
    let prep = |v: &[T]| -> Vec<T> {
        if !normalize_vectors {
            return v.to_vec();
        }
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::zero() {
            v.iter().map(|&x| x / norm).collect()
        } else {
            v.to_vec()
        }
    };
    let xs: Vec<Vec<T>> = xs.iter().map(|v| prep(v)).collect();
    let ys: Vec<Vec<T>> = ys.iter().map(|v| prep(v)).collect();
    let cost = Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| {
        xs[i]
            .iter()
            .zip(&ys[j])
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    });
    GroundMetric::from_cost(source, target, cost)
}

/// `K = exp(-C / epsilon)`, entries raised to the kernel floor.
///
/// Fails with `UnderflowAllZeroRow` if a whole row of the kernel underflows
/// to zero, since the scaling updates would then divide by the floor alone.
pub fn kernel_from_cost<T: Scalar>(gm: &GroundMetric<T>, epsilon: T) -> Result<GroundMetric<T>> {
    let cost = gm
        .cost
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("ground metric has no cost matrix".into()))?;
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let raw = cost.mapv(|c| (-c / epsilon).exp());
    for (row, r) in raw.rows().into_iter().enumerate() {
        if r.iter().all(|&k| k == T::zero()) && !r.is_empty() {
            return Err(Error::UnderflowAllZeroRow { row });
        }
    }
    Ok(GroundMetric {
        source: gm.source.clone(),
        target: gm.target.clone(),
        cost: Some(cost.clone()),
        kernel: Some(raw.mapv(|k| floor_at(k, T::KERNEL_FLOOR))),
        epsilon: Some(epsilon),
    })
}

/// Kernel from a symmetric similarity graph: adjacency weights off the
/// diagonal, `self_weight` on it, missing edges at the kernel floor.
pub fn kernel_from_graph<T: Scalar>(
    support: Arc<Support<T>>,
    adjacency: &Array2<T>,
    self_weight: T,
) -> Result<GroundMetric<T>> {
    let n = support.len();
    check_shape(n, n, adjacency)?;
    if !(self_weight > T::zero()) || !self_weight.is_finite() {
        return Err(Error::InvalidParameter(
            "self weight must be positive".into(),
        ));
    }
    for ((i, j), &a) in adjacency.indexed_iter() {
        if !a.is_finite() {
            return Err(Error::NaNEntry { index: i * n + j });
        }
        if a < T::zero() {
            return Err(Error::InvalidParameter(format!(
                "adjacency entry ({i}, {j}) is negative"
            )));
        }
        if j > i {
            let b = adjacency[(j, i)];
            let scale = a.abs().max(b.abs()).max(T::one());
            if (a - b).abs() > T::of(1e-12) * scale {
                return Err(Error::AsymmetricAdjacency { row: i, col: j });
            }
        }
    }
    let kernel = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            self_weight
        } else {
            floor_at(adjacency[(i, j)], T::KERNEL_FLOOR)
        }
    });
    Ok(GroundMetric {
        source: support.clone(),
        target: support,
        cost: None,
        kernel: Some(kernel),
        epsilon: None,
    })
}

/// Indices of the `top_n` largest scores; ties go to the lower index.
pub(crate) fn top_n_indices<T: Scalar>(scores: &[T], top_n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(top_n);
    idx
}

/// Per-sample diagonal kernel for multi-label ensembling.
///
/// A category that is in the top `top_n` of at least one model gets the mean
/// posterior over all models on the diagonal; every other category gets
/// `floor_zeta`. Off-diagonal entries sit at the kernel floor.
pub fn diagonal_topn_kernel<T: Scalar>(
    support: Arc<Support<T>>,
    posteriors: &[Vec<T>],
    params: &DiagonalKernelParams<T>,
) -> Result<GroundMetric<T>> {
    if posteriors.is_empty() {
        return Err(Error::EmptyPosteriors);
    }
    let n = support.len();
    for p in posteriors {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.len(),
            });
        }
        if let Some(index) = p
            .iter()
            .position(|&x| !x.is_finite() || x < T::zero() || x > T::one())
        {
            return Err(Error::InvalidParameter(format!(
                "posterior entry {index} outside [0, 1]"
            )));
        }
    }
    let mut selected = vec![false; n];
    for p in posteriors {
        for i in top_n_indices(p, params.top_n) {
            selected[i] = true;
        }
    }
    let m = T::of(posteriors.len() as f64);
    let diag: Vec<T> = (0..n)
        .map(|i| {
            if selected[i] {
                let mean = posteriors.iter().map(|p| p[i]).sum::<T>() / m;
                floor_at(mean, T::KERNEL_FLOOR)
            } else {
                params.floor_zeta
            }
        })
        .collect();
    let kernel = Array2::from_shape_fn(
        (n, n),
        |(i, j)| {
            if i == j {
                diag[i]
            } else {
                T::KERNEL_FLOOR
            }
        },
    );
    Ok(GroundMetric {
        source: support.clone(),
        target: support,
        cost: None,
        kernel: Some(kernel),
        epsilon: None,
    })
}

/// Column-normalized binary attribute/class table (attributes on rows,
/// classes on columns), so that each class's attribute indicators sum to one.
pub fn attribute_class_kernel<T: Scalar>(
    attributes: Arc<Support<T>>,
    classes: Arc<Support<T>>,
    table: &Array2<T>,
) -> Result<GroundMetric<T>> {
    check_shape(attributes.len(), classes.len(), table)?;
    if let Some(((i, j), _)) = table
        .indexed_iter()
        .find(|(_, &x)| x != T::zero() && x != T::one())
    {
        return Err(Error::InvalidParameter(format!(
            "attribute table entry ({i}, {j}) is not 0 or 1"
        )));
    }
    let mut kernel = table.clone();
    for (col, mut c) in kernel.columns_mut().into_iter().enumerate() {
        let s: T = c.iter().copied().sum();
        if s == T::zero() {
            return Err(Error::EmptyColumn { col });
        }
        c.mapv_inplace(|x| floor_at(x / s, T::KERNEL_FLOOR));
    }
    Ok(GroundMetric {
        source: attributes,
        target: classes,
        cost: None,
        kernel: Some(kernel),
        epsilon: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(points: &[f64]) -> Arc<Support<f64>> {
        Arc::new(
            Support::indexed(points.len())
                .with_points(points.iter().map(|&x| vec![x]).collect())
                .unwrap(),
        )
    }

    #[test]
    fn cost_on_a_line() {
        let s = line(&[0.0, 1.0]);
        let gm = cost_from_embeddings(s.clone(), s, false).unwrap();
        assert_eq!(gm.cost().unwrap(), &array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(gm.kernel().is_none());
    }

    #[test]
    fn normalized_orthogonal_vectors_cost_two() {
        let s = Arc::new(
            Support::indexed(2)
                .with_points(vec![vec![3.0_f64, 0.0], vec![0.0, 0.5]])
                .unwrap(),
        );
        let gm = cost_from_embeddings(s.clone(), s, true).unwrap();
        let c = gm.cost().unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        assert!((c[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cost_requires_points_and_dimension() {
        let bare = Arc::new(Support::<f64>::indexed(2));
        assert_eq!(
            cost_from_embeddings(bare.clone(), bare, true).unwrap_err(),
            Error::MissingPoints
        );
        let a = line(&[0.0, 1.0]);
        let b = Arc::new(
            Support::indexed(1)
                .with_points(vec![vec![0.0, 0.0]])
                .unwrap(),
        );
        assert!(matches!(
            cost_from_embeddings(a, b, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_exponentiates() {
        let s = line(&[0.0, 1.0]);
        let gm =
            kernel_from_cost(&cost_from_embeddings(s.clone(), s, false).unwrap(), 1.0).unwrap();
        let k = gm.kernel().unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-16);
        assert_eq!(gm.epsilon(), Some(1.0));
        let expect = (2.0 * (-2.0f64).exp()).sqrt();
        assert!((gm.distance_to_identity().unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_gives_ones() {
        let s = Arc::new(Support::<f64>::indexed(3));
        let gm = GroundMetric::from_cost(s.clone(), s, Array2::zeros((3, 3))).unwrap();
        let k = kernel_from_cost(&gm, 0.5).unwrap();
        assert!(k.kernel().unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn far_costs_hit_the_floor() {
        let s = Arc::new(Support::<f64>::indexed(2));
        // exp(-100) is representable in f64, so no clamping happens there
        let gm = GroundMetric::from_cost(s.clone(), s.clone(), array![[0.0, 100.0], [100.0, 0.0]])
            .unwrap();
        let k = kernel_from_cost(&gm, 1.0).unwrap();
        assert_eq!(k.kernel().unwrap()[(0, 1)], (-100.0f64).exp());
        // exp(-1000) underflows and is clamped
        let gm =
            GroundMetric::from_cost(s.clone(), s, array![[0.0, 1000.0], [1000.0, 0.0]]).unwrap();
        let k = kernel_from_cost(&gm, 1.0).unwrap();
        assert_eq!(k.kernel().unwrap()[(0, 1)], f64::KERNEL_FLOOR);
        // in single precision exp(-100) is already below the floor
        let s32 = Arc::new(Support::<f32>::indexed(2));
        let gm = GroundMetric::from_cost(s32.clone(), s32, array![[0.0f32, 100.0], [100.0, 0.0]])
            .unwrap();
        let k = kernel_from_cost(&gm, 1.0).unwrap();
        assert_eq!(k.kernel().unwrap()[(0, 1)], f32::KERNEL_FLOOR);
    }

    #[test]
    fn all_zero_row_is_an_error() {
        let s = Arc::new(Support::<f64>::indexed(2));
        let gm = GroundMetric::from_cost(s.clone(), s, array![[1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            kernel_from_cost(&gm, 1e-4).unwrap_err(),
            Error::UnderflowAllZeroRow { row: 0 }
        );
    }

    #[test]
    fn graph_kernels() {
        let s = Arc::new(Support::<f64>::indexed(2));
        let k = kernel_from_graph(s.clone(), &Array2::zeros((2, 2)), 1.0).unwrap();
        assert_eq!(k.kernel().unwrap(), &array![[1.0, 1e-300], [1e-300, 1.0]]);
        let k = kernel_from_graph(s.clone(), &array![[0.0, 0.5], [0.5, 0.0]], 1.0).unwrap();
        assert_eq!(k.kernel().unwrap(), &array![[1.0, 0.5], [0.5, 1.0]]);
        assert_eq!(
            kernel_from_graph(s, &array![[0.0, 0.5], [0.4, 0.0]], 1.0).unwrap_err(),
            Error::AsymmetricAdjacency { row: 0, col: 1 }
        );
    }

    #[test]
    fn diagonal_topn_examples() {
        let s = Arc::new(Support::<f64>::indexed(3));
        let p = DiagonalKernelParams::new(1, 0.01).unwrap();
        let k = diagonal_topn_kernel(s, &[vec![0.9, 0.5, 0.1], vec![0.8, 0.2, 0.3]], &p).unwrap();
        let k = k.kernel().unwrap();
        assert!((k[(0, 0)] - 0.85).abs() < 1e-15);
        assert_eq!(k[(1, 1)], 0.01);
        assert_eq!(k[(2, 2)], 0.01);
        assert_eq!(k[(0, 1)], f64::KERNEL_FLOOR);

        let s = Arc::new(Support::<f64>::indexed(2));
        let k = diagonal_topn_kernel(s.clone(), &[vec![1.0, 0.0]], &p).unwrap();
        assert_eq!(k.kernel().unwrap().diag().to_vec(), vec![1.0, 0.01]);
        assert_eq!(
            diagonal_topn_kernel(s, &[], &p).unwrap_err(),
            Error::EmptyPosteriors
        );
    }

    #[test]
    fn diagonal_topn_full_is_mean() {
        let s = Arc::new(Support::<f64>::indexed(3));
        let p = DiagonalKernelParams::new(3, 0.01).unwrap();
        let k = diagonal_topn_kernel(s, &[vec![0.9, 0.5, 0.1], vec![0.8, 0.2, 0.3]], &p).unwrap();
        let d = k.kernel().unwrap().diag().to_vec();
        for (x, e) in d.iter().zip([0.85, 0.35, 0.2]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn topn_ties_prefer_lower_index() {
        assert_eq!(top_n_indices(&[0.5, 0.7, 0.7, 0.1], 2), vec![1, 2]);
        assert_eq!(top_n_indices(&[0.5, 0.5, 0.5], 1), vec![0]);
    }

    #[test]
    fn attribute_kernel_examples() {
        let a = Arc::new(Support::<f64>::indexed(3));
        let c = Arc::new(Support::<f64>::indexed(2));
        let k = attribute_class_kernel(a, c, &array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let k = k.kernel().unwrap();
        assert_eq!(k[(0, 0)], 0.5);
        assert_eq!(k[(1, 1)], 0.5);
        assert_eq!(k[(0, 1)], f64::KERNEL_FLOOR);
        for col in k.columns() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        let s = Arc::new(Support::<f64>::indexed(2));
        let k = attribute_class_kernel(s.clone(), s.clone(), &Array2::eye(2)).unwrap();
        assert_eq!(k.kernel().unwrap().diag().to_vec(), vec![1.0, 1.0]);
        assert_eq!(
            attribute_class_kernel(s.clone(), s, &array![[1.0, 0.0], [1.0, 0.0]]).unwrap_err(),
            Error::EmptyColumn { col: 1 }
        );
    }
}
