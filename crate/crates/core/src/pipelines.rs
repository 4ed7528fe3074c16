//! End-to-end ensembling workflows: attributes to classes, multi-label
//! prediction with per-sample diagonal kernels, multi-label metrics, and the
//! semantic-shuffle robustness experiment on a synthetic cluster task.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::barycenter::{
    balanced_barycenter, unbalanced_barycenter, BarycenterResult, SolverParams,
};
use crate::error::{Error, Result};
use crate::frechet::{arithmetic_mean, geometric_mean, MeanOptions};
use crate::ground_metric::{
    diagonal_topn_kernel, kernel_from_graph, DiagonalKernelParams, GroundMetric,
};
use crate::measures::{Ensemble, EnsembleInput, EnsembleWeights, Histogram, Support};
use crate::scalar::Scalar;

/// Scores below this value are raised to it before ensembling.
pub const SCORE_FLOOR: f64 = 1e-12;
/// Default cluster threshold of [`semantic_shuffle`], relative to the largest
/// off-diagonal kernel entry.
pub const SHUFFLE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

fn score_histograms<T: Scalar>(
    scores: &[Vec<T>],
    support: &Arc<Support<T>>,
) -> Result<Vec<Histogram<T>>> {
    if scores.is_empty() {
        return Err(Error::EmptyPosteriors);
    }
    let floor = T::of(SCORE_FLOOR);
    scores
        .iter()
        .map(|s| {
            if s.len() != support.len() {
                return Err(Error::DimensionMismatch {
                    expected: support.len(),
                    found: s.len(),
                });
            }
            if let Some(index) = s.iter().position(|&x| !x.is_finite()) {
                return Err(Error::NaNEntry { index });
            }
            if let Some(index) = s.iter().position(|&x| x < T::zero() || x > T::one()) {
                return Err(Error::InvalidParameter(format!(
                    "score entry {index} outside [0, 1]"
                )));
            }
            let mass = s
                .iter()
                .map(|&x| if x < floor { floor } else { x })
                .collect();
            Histogram::new(support.clone(), mass, false)
        })
        .collect()
}

fn weights_or_uniform<T: Scalar>(
    weights: Option<EnsembleWeights<T>>,
    m: usize,
) -> Result<EnsembleWeights<T>> {
    match weights {
        Some(w) => Ok(w),
        None => EnsembleWeights::uniform(m),
    }
}

/// Class histogram from per-model attribute scores.
///
/// Runs the unbalanced barycenter with the attribute/class kernel, so mass
/// moves from attributes (source) to classes (target). Scores must lie in
/// `[0, 1]`; they are floored at [`SCORE_FLOOR`].
pub fn attribute_to_class<T: Scalar>(
    attribute_scores: &[Vec<T>],
    kernel: &Arc<GroundMetric<T>>,
    weights: Option<EnsembleWeights<T>>,
    params: &SolverParams<T>,
) -> Result<BarycenterResult<T>> {
    let models = score_histograms(attribute_scores, kernel.source())?;
    let weights = weights_or_uniform(weights, models.len())?;
    let input = EnsembleInput::with_shared_kernel(Ensemble::new(models, weights)?, kernel.clone())?;
    unbalanced_barycenter(&input, params)
}

/// Baseline: average the attribute scores, then project with `K^T`.
pub fn baseline_attribute_projection<T: Scalar>(
    attribute_scores: &[Vec<T>],
    kernel: &GroundMetric<T>,
    mean: MeanKind,
    weights: Option<EnsembleWeights<T>>,
) -> Result<Histogram<T>> {
    let k = kernel
        .kernel()
        .ok_or_else(|| Error::InvalidParameter("projection needs a kernel matrix".into()))?;
    let models = score_histograms(attribute_scores, kernel.source())?;
    let weights = weights_or_uniform(weights, models.len())?;
    let ensemble = Ensemble::new(models, weights)?;
    let avg = match mean {
        MeanKind::Arithmetic => arithmetic_mean(&ensemble)?,
        MeanKind::Geometric => geometric_mean(&ensemble, &MeanOptions::default())?,
    };
    let mut out = vec![T::zero(); k.ncols()];
    for (row, &x) in k.rows().into_iter().zip(avg.mass()) {
        for (o, &kij) in out.iter_mut().zip(row) {
            *o += kij * x;
        }
    }
    Histogram::new(kernel.target().clone(), out, false)
}

/// Multi-label barycenter for one sample.
///
/// Builds the diagonal top-N kernel from the sample's own scores and returns
/// the unbalanced barycenter's masses (raw scores, not thresholded).
pub fn multilabel_ensemble<T: Scalar>(
    sample_scores: &[Vec<T>],
    weights: Option<EnsembleWeights<T>>,
    params: &SolverParams<T>,
    diag_params: &DiagonalKernelParams<T>,
) -> Result<Vec<T>> {
    let n = sample_scores.first().ok_or(Error::EmptyPosteriors)?.len();
    let support = Arc::new(Support::indexed(n));
    let kernel = diagonal_topn_kernel(support.clone(), sample_scores, diag_params)?;
    let models = score_histograms(sample_scores, &support)?;
    let weights = weights_or_uniform(weights, models.len())?;
    let input =
        EnsembleInput::with_shared_kernel(Ensemble::new(models, weights)?, Arc::new(kernel))?;
    Ok(unbalanced_barycenter(&input, params)?
        .barycenter
        .into_mass())
}

/// One multi-label sample: per-model scores and the binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelSample<T> {
    pub scores: Vec<Vec<T>>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset<T> {
    samples: Vec<MultiLabelSample<T>>,
}

impl<T: Scalar> MultiLabelDataset<T> {
    /// Checks that every sample has the same number of models and categories
    /// and that scores lie in `[0, 1]`.
    pub fn new(samples: Vec<MultiLabelSample<T>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let m = first.scores.len();
        let n = first.truth.len();
        for s in &samples {
            if s.scores.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: s.scores.len(),
                });
            }
            if s.truth.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.truth.len(),
                });
            }
            for row in &s.scores {
                if row.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: row.len(),
                    });
                }
                if let Some(index) = row.iter().position(|&x| !(x >= T::zero() && x <= T::one())) {
                    return Err(Error::InvalidParameter(format!(
                        "score entry {index} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[MultiLabelSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn truths(&self) -> Vec<Vec<bool>> {
        self.samples.iter().map(|s| s.truth.clone()).collect()
    }

    /// [`multilabel_ensemble`] on every sample, in order.
    pub fn barycenter_predictions(
        &self,
        params: &SolverParams<T>,
        diag_params: &DiagonalKernelParams<T>,
    ) -> Result<Vec<Vec<T>>> {
        self.samples
            .iter()
            .map(|s| multilabel_ensemble(&s.scores, None, params, diag_params))
            .collect()
    }

    /// Arithmetic or geometric mean of the model scores of every sample.
    pub fn mean_predictions(&self, mean: MeanKind) -> Result<Vec<Vec<T>>> {
        self.samples
            .iter()
            .map(|s| {
                let support = Arc::new(Support::indexed(s.truth.len()));
                let ens = Ensemble::uniform(score_histograms(&s.scores, &support)?)?;
                let h = match mean {
                    MeanKind::Arithmetic => arithmetic_mean(&ens)?,
                    MeanKind::Geometric => geometric_mean(&ens, &MeanOptions::default())?,
                };
                Ok(h.into_mass())
            })
            .collect()
    }
}

/// Multi-label metrics; the `_c` fields are per-class (macro) averages, the
/// `_o` fields overall (micro) ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport<T> {
    pub map: T,
    pub f1_c: T,
    pub p_c: T,
    pub r_c: T,
    pub f1_o: T,
    pub p_o: T,
    pub r_o: T,
}

/// All-points average precision: the mean of the precision at the rank of
/// every positive. Ties in score are ranked by sample order. `None` when
/// there is no positive.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Option<T> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += T::of(hits as f64) / T::of((rank + 1) as f64);
        }
    }
    Some(sum / T::of(positives as f64))
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::of(num as f64) / T::of(den as f64)
    }
}

fn harmonic<T: Scalar>(p: T, r: T) -> T {
    if p + r > T::zero() {
        T::of(2.0) * p * r / (p + r)
    } else {
        T::zero()
    }
}

/// mAP plus macro and micro precision, recall and F1 at `threshold`.
///
/// A score counts as a positive prediction when it is at least `threshold`.
/// Classes without any ground-truth positive are left out of mAP and of the
/// per-class averages; they still count towards the overall ratios. `F1-C` is
/// the harmonic mean of `P-C` and `R-C`, `F1-O` that of `P-O` and `R-O`.
pub fn evaluate_multilabel<T: Scalar>(
    predictions: &[Vec<T>],
    truths: &[Vec<bool>],
    threshold: T,
) -> Result<MetricsReport<T>> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            found: truths.len(),
        });
    }
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::InvalidParameter(
            "threshold must lie in (0, 1)".into(),
        ));
    }
    let n = truths[0].len();
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != n || t.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if p.len() != n { p.len() } else { t.len() },
            });
        }
    }

    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let (mut ap_sum, mut p_sum, mut r_sum) = (T::zero(), T::zero(), T::zero());
    let mut counted = 0usize;
    for c in 0..n {
        let scores: Vec<T> = predictions.iter().map(|p| p[c]).collect();
        let labels: Vec<bool> = truths.iter().map(|t| t[c]).collect();
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for (&s, &l) in scores.iter().zip(&labels) {
            match (s >= threshold, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        if let Some(ap) = average_precision(&scores, &labels) {
            counted += 1;
            ap_sum += ap;
            p_sum += ratio::<T>(tp, tp + fp);
            r_sum += ratio::<T>(tp, tp + fneg);
        }
    }
    let per_class = |s: T| {
        if counted == 0 {
            T::zero()
        } else {
            s / T::of(counted as f64)
        }
    };
    let (p_c, r_c) = (per_class(p_sum), per_class(r_sum));
    let p_o = ratio(tp_all, tp_all + fp_all);
    let r_o = ratio(tp_all, tp_all + fn_all);
    Ok(MetricsReport {
        map: per_class(ap_sum),
        f1_c: harmonic(p_c, r_c),
        p_c,
        r_c,
        f1_o: harmonic(p_o, r_o),
        p_o,
        r_o,
    })
}

/// Connected components of `{(i, j) : i != j, K_ij >= theta * max_offdiag(K)}`,
/// each sorted, ordered by smallest member. Kernels whose off-diagonal sits at
/// the clamp floor give singletons.
pub fn semantic_clusters<T: Scalar>(kernel: &Array2<T>, theta: T) -> Vec<Vec<usize>> {
    let n = kernel.nrows();
    let max_off = kernel
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .fold(T::zero(), |a, (_, &x)| if x > a { x } else { a });
    let cut = theta * max_off;
    let linked = |i: usize, j: usize| {
        max_off > T::KERNEL_FLOOR && (kernel[(i, j)] >= cut || kernel[(j, i)] >= cut)
    };
    let mut label = vec![usize::MAX; n];
    let mut clusters = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![start];
        label[start] = id;
        let mut head = 0;
        while head < members.len() {
            let i = members[head];
            head += 1;
            for (j, l) in label.iter_mut().enumerate() {
                if *l == usize::MAX && j != i && linked(i, j) {
                    *l = id;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

/// [`semantic_shuffle_with_threshold`] at [`SHUFFLE_THRESHOLD`].
pub fn semantic_shuffle<T: Scalar>(
    models: &EnsembleInput<T>,
    kernel: &GroundMetric<T>,
    seed: u64,
) -> Result<EnsembleInput<T>> {
    semantic_shuffle_with_threshold(models, kernel, seed, T::of(SHUFFLE_THRESHOLD))
}

/// Permutes every model's mass uniformly at random within each cluster of
/// [`semantic_clusters`]. Models are visited in order and clusters by
/// smallest member, all drawing from one ChaCha8 stream seeded with `seed`.
pub fn semantic_shuffle_with_threshold<T: Scalar>(
    models: &EnsembleInput<T>,
    kernel: &GroundMetric<T>,
    seed: u64,
    theta: T,
) -> Result<EnsembleInput<T>> {
    let k = kernel
        .kernel()
        .ok_or_else(|| Error::InvalidParameter("shuffling needs a kernel matrix".into()))?;
    let n = models.target().len();
    if k.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: k.nrows(),
        });
    }
    let clusters = semantic_clusters(k, theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = Vec::with_capacity(models.len());
    for h in models.models() {
        if h.len() != n {
            return Err(Error::SupportMismatch);
        }
        let mut mass = h.mass().to_vec();
        for c in &clusters {
            if c.len() < 2 {
                continue;
            }
            let mut vals: Vec<T> = c.iter().map(|&i| mass[i]).collect();
            vals.shuffle(&mut rng);
            for (&i, v) in c.iter().zip(vals) {
                mass[i] = v;
            }
        }
        shuffled.push(Histogram::new(
            h.support().clone(),
            mass,
            h.is_normalized(),
        )?);
    }
    let ensemble = Ensemble::new(shuffled, models.ensemble().weights().clone())?;
    EnsembleInput::new(ensemble, models.kernels().to_vec())
}

/// Synthetic multi-class task with cluster-structured labels.
///
/// Bins come in `n_clusters` groups of `cluster_size`. For a sample with true
/// bin `t`, every model predicts `softmax(peak * onehot(t) + noise * z)` with
/// standard normal `z`, after which its mass is shuffled within clusters. The
/// kernel links bins of one cluster with weight `within_weight` (self weight
/// one), which is what [`semantic_shuffle`] uses to find the clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterTask {
    pub n_clusters: usize,
    pub cluster_size: usize,
    pub n_models: usize,
    pub peak: f64,
    pub noise: f64,
    pub within_weight: f64,
    pub samples_per_trial: usize,
}

impl Default for ClusterTask {
    /// 10 clusters of 3 bins, 4 models, 50 samples per trial.
    fn default() -> Self {
        Self {
            n_clusters: 10,
            cluster_size: 3,
            n_models: 4,
            peak: 2.0,
            noise: 1.0,
            within_weight: 0.5,
            samples_per_trial: 50,
        }
    }
}

/// Share of samples whose predicted bin falls in the true bin's cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleOutcome {
    pub barycenter: f64,
    pub arithmetic: f64,
    pub geometric: f64,
}

fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ClusterTask {
    pub fn bins(&self) -> usize {
        self.n_clusters * self.cluster_size
    }

    pub fn cluster_of(&self, bin: usize) -> usize {
        bin / self.cluster_size
    }

    pub fn kernel<T: Scalar>(&self) -> Result<GroundMetric<T>> {
        let n = self.bins();
        let adjacency = Array2::from_shape_fn((n, n), |(i, j)| {
            if i != j && self.cluster_of(i) == self.cluster_of(j) {
                T::of(self.within_weight)
            } else {
                T::zero()
            }
        });
        kernel_from_graph(Arc::new(Support::indexed(n)), &adjacency, T::one())
    }

    /// Unshuffled model predictions and the true bin for each sample of a trial.
    pub fn samples(&self, seed: u64) -> Vec<(Vec<Vec<f64>>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.bins();
        (0..self.samples_per_trial)
            .map(|_| {
                let truth = rand::Rng::gen_range(&mut rng, 0..n);
                let preds = (0..self.n_models)
                    .map(|_| {
                        let logits: Vec<f64> = (0..n)
                            .map(|i| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                let bump = if i == truth { self.peak } else { 0.0 };
                                bump + self.noise * z
                            })
                            .collect();
                        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
                        let s: f64 = exps.iter().sum();
                        exps.into_iter().map(|e| e / s).collect()
                    })
                    .collect();
                (preds, truth)
            })
            .collect()
    }

    /// One trial: generate, shuffle within clusters, ensemble three ways and
    /// score cluster-level top-1 agreement.
    pub fn run_trial(&self, seed: u64, params: &SolverParams<f64>) -> Result<ShuffleOutcome> {
        let kernel = Arc::new(self.kernel::<f64>()?);
        let support = kernel.source().clone();
        let mut hits = [0usize; 3];
        let samples = self.samples(seed);
        for (k, (preds, truth)) in samples.iter().enumerate() {
            let models = preds
                .iter()
                .map(|p| Histogram::new(support.clone(), p.clone(), true))
                .collect::<Result<Vec<_>>>()?;
            let input =
                EnsembleInput::with_shared_kernel(Ensemble::uniform(models)?, kernel.clone())?;
            let shuffle_seed = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            let shuffled = semantic_shuffle(&input, &kernel, shuffle_seed)?;
            let outputs = [
                balanced_barycenter(&shuffled, params)?
                    .barycenter
                    .into_mass(),
                arithmetic_mean(shuffled.ensemble())?.into_mass(),
                geometric_mean(shuffled.ensemble(), &MeanOptions::default())?.into_mass(),
            ];
            for (h, out) in hits.iter_mut().zip(&outputs) {
                if self.cluster_of(argmax(out)) == self.cluster_of(*truth) {
                    *h += 1;
                }
            }
        }
        let total = samples.len().max(1) as f64;
        Ok(ShuffleOutcome {
            barycenter: hits[0] as f64 / total,
            arithmetic: hits[1] as f64 / total,
            geometric: hits[2] as f64 / total,
        })
    }
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips (ties are dropped by the caller).
pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // accumulate C(n, k) / 2^n in log space
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (ln_c + ln_half_n).exp();
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::ground_metric::attribute_class_kernel;

    fn toy_kernel() -> Arc<GroundMetric<f64>> {
        let attrs = Arc::new(Support::new(["stripes", "hooves"]).unwrap());
        let classes = Arc::new(Support::new(["zebra", "horse"]).unwrap());
        Arc::new(attribute_class_kernel(attrs, classes, &array![[1.0, 0.0], [0.0, 1.0]]).unwrap())
    }

    #[test]
    fn attribute_to_class_picks_indicated_class() {
        let k = toy_kernel();
        let scores = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![0.1, 0.9]];
        let r = attribute_to_class(&scores, &k, None, &SolverParams::new(0.1).with_max_iter(50))
            .unwrap();
        assert_eq!(argmax(r.barycenter.mass()), 1);
        assert_eq!(r.barycenter.support().labels()[1], "horse");
    }

    #[test]
    fn attribute_to_class_identical_models_match_single() {
        let k = toy_kernel();
        let params = SolverParams::new(0.1).with_max_iter(50);
        let one = attribute_to_class(&[vec![0.3, 0.8]], &k, None, &params).unwrap();
        let many = attribute_to_class(&vec![vec![0.3, 0.8]; 3], &k, None, &params).unwrap();
        for (a, b) in one.barycenter.mass().iter().zip(many.barycenter.mass()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attribute_to_class_all_zero_scores() {
        let k = toy_kernel();
        let r = attribute_to_class(&vec![vec![0.0, 0.0]; 2], &k, None, &SolverParams::new(0.1));
        match r {
            Err(Error::DivisionUnderflow { .. }) => {}
            Ok(r) => {
                let p = r.barycenter.mass();
                assert!((p[0] - p[1]).abs() <= 1e-9 * p[0].max(p[1]).max(1e-300));
                assert!(p[0] < 1e-9);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn projection_examples() {
        let k = toy_kernel();
        let h = baseline_attribute_projection(&[vec![0.9, 0.1]], &k, MeanKind::Arithmetic, None)
            .unwrap();
        assert_eq!(h.mass(), &[0.9, 0.1]);

        let s = Arc::new(Support::indexed(3));
        let id = GroundMetric::identity(s);
        let scores = vec![vec![0.2_f64, 0.4, 0.6], vec![0.4, 0.2, 0.0]];
        let h = baseline_attribute_projection(&scores, &id, MeanKind::Arithmetic, None).unwrap();
        for (a, b) in h.mass().iter().zip([0.3, 0.3, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }

        let attrs = Arc::new(Support::indexed(3));
        let classes = Arc::new(Support::indexed(2));
        let k = attribute_class_kernel(attrs, classes, &array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
            .unwrap();
        let mu = vec![0.2_f64, 0.6, 0.4];
        let h = baseline_attribute_projection(&[mu], &k, MeanKind::Geometric, None).unwrap();
        assert!((h.mass()[0] - 0.4).abs() < 1e-12 && (h.mass()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn multilabel_examples() {
        let params = SolverParams::new(0.1).with_max_iter(50);
        let scores = vec![vec![0.9_f64, 0.2, 0.5, 0.7]];
        let diag = DiagonalKernelParams::new(4, 1e-3).unwrap();
        let p = multilabel_ensemble(&scores, None, &params, &diag).unwrap();
        let mut by_input: Vec<usize> = (0..4).collect();
        by_input.sort_by(|&a, &b| scores[0][b].partial_cmp(&scores[0][a]).unwrap());
        let mut by_output: Vec<usize> = (0..4).collect();
        by_output.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap());
        assert_eq!(by_input, by_output);

        let scores = vec![vec![1.0_f64, 0.1, 0.3], vec![1.0, 0.4, 0.2]];
        let diag = DiagonalKernelParams::new(1, 1e-3).unwrap();
        let p = multilabel_ensemble(&scores, None, &params, &diag).unwrap();
        assert_eq!(argmax(&p), 0);

        let scores = vec![vec![0.6_f64, 0.6, 0.1], vec![0.3, 0.3, 0.9]];
        let diag = DiagonalKernelParams::new(2, 1e-3).unwrap();
        let p = multilabel_ensemble(&scores, None, &params, &diag).unwrap();
        assert!((p[0] - p[1]).abs() <= 1e-9);
    }

    #[test]
    fn metrics_perfect_predictor() {
        let truths = vec![vec![true, false, true], vec![false, true, false]];
        let preds: Vec<Vec<f64>> = truths
            .iter()
            .map(|t| t.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect();
        let m = evaluate_multilabel(&preds, &truths, 0.5).unwrap();
        for x in [m.map, m.f1_c, m.p_c, m.r_c, m.f1_o, m.p_o, m.r_o] {
            assert_eq!(x, 1.0);
        }
    }

    #[test]
    fn metrics_average_precision_rank_two() {
        let m = evaluate_multilabel(&[vec![0.9_f64], vec![0.4]], &[vec![false], vec![true]], 0.5)
            .unwrap();
        assert!((m.map - 0.5).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.4], &[false, true]), Some(0.5));
    }

    #[test]
    fn metrics_exclude_classes_without_positives() {
        let truths = vec![vec![true, false], vec![false, false]];
        let preds = vec![vec![0.8_f64, 0.9], vec![0.1, 0.7]];
        let m = evaluate_multilabel(&preds, &truths, 0.5).unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!(m.p_c, 1.0);
        assert!((m.p_o - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            evaluate_multilabel::<f64>(&[], &[], 0.5),
            Err(Error::EmptyDataset)
        ));
    }

    fn shuffle_input(kernel: &GroundMetric<f64>) -> EnsembleInput<f64> {
        let s = kernel.source().clone();
        let models = vec![
            Histogram::new(s.clone(), vec![0.1, 0.2, 0.3, 0.4], true).unwrap(),
            Histogram::new(s, vec![0.4, 0.3, 0.2, 0.1], true).unwrap(),
        ];
        EnsembleInput::with_shared_kernel(
            Ensemble::uniform(models).unwrap(),
            Arc::new(kernel.clone()),
        )
        .unwrap()
    }

    #[test]
    fn shuffle_identity_is_noop() {
        let k = GroundMetric::identity(Arc::new(Support::indexed(4)));
        let inp = shuffle_input(&k);
        let out = semantic_shuffle(&inp, &k, 7).unwrap();
        for (a, b) in inp.models().iter().zip(out.models()) {
            assert_eq!(a.mass(), b.mass());
        }
    }

    #[test]
    fn shuffle_all_ones_permutes_everything() {
        let s = Arc::new(Support::indexed(4));
        let k = GroundMetric::from_kernel(s.clone(), s, Array2::from_elem((4, 4), 1.0)).unwrap();
        assert_eq!(
            semantic_clusters(k.kernel().unwrap(), 0.5),
            vec![vec![0, 1, 2, 3]]
        );
        let inp = shuffle_input(&k);
        let mut moved = false;
        for seed in 0..10 {
            let out = semantic_shuffle(&inp, &k, seed).unwrap();
            for (a, b) in inp.models().iter().zip(out.models()) {
                let mut x = a.mass().to_vec();
                let mut y = b.mass().to_vec();
                moved |= x != y;
                x.sort_by(f64::total_cmp);
                y.sort_by(f64::total_cmp);
                assert_eq!(x, y);
            }
        }
        assert!(moved);
    }

    #[test]
    fn shuffle_is_seeded() {
        let task = ClusterTask::default();
        let k = task.kernel::<f64>().unwrap();
        assert_eq!(semantic_clusters(k.kernel().unwrap(), 0.5).len(), 10);
        let s = k.source().clone();
        let h = Histogram::new(s, (0..30).map(|i| (i + 1) as f64 / 465.0).collect(), true).unwrap();
        let inp = EnsembleInput::with_shared_kernel(
            Ensemble::uniform(vec![h]).unwrap(),
            Arc::new(k.clone()),
        )
        .unwrap();
        let a = semantic_shuffle(&inp, &k, 42).unwrap();
        let b = semantic_shuffle(&inp, &k, 42).unwrap();
        assert_eq!(a.models()[0].mass(), b.models()[0].mass());
        for (i, (&x, &y)) in inp.models()[0]
            .mass()
            .iter()
            .zip(a.models()[0].mass())
            .enumerate()
        {
            let moved_to = inp.models()[0].mass().iter().position(|&z| z == y).unwrap();
            assert_eq!(task.cluster_of(moved_to), task.cluster_of(i), "{x} {y}");
        }
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(10, 0) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p_value(0, 3) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(2, 1) - 0.5).abs() < 1e-12);
    }
}
