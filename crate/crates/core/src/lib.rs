//! Multi-model ensembling with Wasserstein barycenters.
//!
//! Predictions of several models are histograms over (possibly different)
//! label sets. A ground metric between label sets encodes semantic similarity,
//! and the ensemble output is the entropic Wasserstein barycenter of the model
//! predictions under that metric. The core is generic over [`Scalar`]
//! (`f32` and `f64`); aliases for both are provided below.

// `!(x > 0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barycenter;
pub mod diagnostics;
pub mod error;
pub mod frechet;
pub mod ground_metric;
pub mod measures;
pub mod pipelines;
pub mod scalar;
pub mod transport;

pub use barycenter::{
    attribute_sources, balanced_barycenter, optimal_relaxation, unbalanced_barycenter,
    BarycenterResult, Coupling, Domain, SolverParams,
};
pub use diagnostics::{
    check_entropy_lemma, check_prop1, entropy, smoothness_energy, BoundCheck, DiagnosticsReport,
    DistancePath,
};
pub use error::{Error, Result};
pub use frechet::{arithmetic_mean, geometric_mean, performance_weights, MeanOptions};
pub use ground_metric::{
    attribute_class_kernel, cost_from_embeddings, diagonal_topn_kernel, kernel_from_cost,
    kernel_from_graph, DiagonalKernelParams, GroundMetric,
};
pub use measures::{
    normalize, validate, Ensemble, EnsembleInput, EnsembleWeights, Histogram, Support,
};
pub use pipelines::{
    attribute_to_class, average_precision, baseline_attribute_projection, evaluate_multilabel,
    multilabel_ensemble, semantic_clusters, semantic_shuffle, semantic_shuffle_with_threshold,
    sign_test_p_value, ClusterTask, MeanKind, MetricsReport, MultiLabelDataset, MultiLabelSample,
    ShuffleOutcome,
};
pub use scalar::Scalar;
pub use transport::{exact_barycenter_2bin, exact_ot_2bin, sinkhorn_distance, OTResult};

pub type Histogram64 = Histogram<f64>;
pub type Histogram32 = Histogram<f32>;
pub type Support64 = Support<f64>;
pub type Support32 = Support<f32>;
pub type GroundMetric64 = GroundMetric<f64>;
pub type GroundMetric32 = GroundMetric<f32>;
pub type Ensemble64 = Ensemble<f64>;
pub type Ensemble32 = Ensemble<f32>;
pub type EnsembleInput64 = EnsembleInput<f64>;
pub type EnsembleInput32 = EnsembleInput<f32>;
pub type SolverParams64 = SolverParams<f64>;
pub type SolverParams32 = SolverParams<f32>;
pub type BarycenterResult64 = BarycenterResult<f64>;
pub type BarycenterResult32 = BarycenterResult<f32>;
