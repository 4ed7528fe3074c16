use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use wass_ensemble::{
    balanced_barycenter, check_entropy_lemma, geometric_mean, kernel_from_cost,
    multilabel_ensemble, unbalanced_barycenter, DiagonalKernelParams, Ensemble, EnsembleInput,
    EnsembleWeights, GroundMetric, Histogram, MeanOptions, SolverParams, Support,
};

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn ensemble(models: &[Vec<f64>]) -> Ensemble<f64> {
    let support = Arc::new(Support::indexed(models[0].len()));
    let hs = models
        .iter()
        .map(|m| Histogram::new(support.clone(), m.clone(), true).unwrap())
        .collect();
    Ensemble::uniform(hs).unwrap()
}

fn line_kernel(n: usize, epsilon: f64) -> Arc<GroundMetric<f64>> {
    let support = Arc::new(Support::indexed(n));
    let scale = ((n - 1) * (n - 1)) as f64;
    let cost = Array2::from_shape_fn((n, n), |(i, j)| (i as f64 - j as f64).powi(2) / scale);
    let gm = GroundMetric::from_cost(support.clone(), support, cost).unwrap();
    Arc::new(kernel_from_cost(&gm, epsilon).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identity_kernel_fixed_point_is_geometric_mean(models in prop::collection::vec(simplex(7), 2..5)) {
        let e = ensemble(&models);
        let geo = geometric_mean(&e, &MeanOptions::default()).unwrap();
        let identity = Arc::new(GroundMetric::identity(e.shared_support().unwrap().clone()));
        let input = EnsembleInput::with_shared_kernel(e, identity).unwrap();
        let out = balanced_barycenter(&input, &SolverParams::new(0.1).with_max_iter(2)).unwrap();
        for (a, b) in out.barycenter.mass().iter().zip(geo.mass()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn balanced_marginals_and_mass(models in prop::collection::vec(simplex(6), 2..4)) {
        let input = EnsembleInput::with_shared_kernel(ensemble(&models), line_kernel(6, 0.2)).unwrap();
        let params = SolverParams::new(0.2)
            .with_max_iter(20_000)
            .with_tolerance(1e-13)
            .with_couplings(true);
        let out = balanced_barycenter(&input, &params).unwrap();
        prop_assert!(out.converged);
        let p = out.barycenter.mass();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        for (c, mu) in out.couplings.as_ref().unwrap().iter().zip(&models) {
            let rows: f64 = c.row_sums().iter().zip(mu).map(|(a, b)| (a - b).abs()).sum();
            let cols: f64 = c.col_sums().iter().zip(p).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(rows <= 1e-8, "row marginal off by {}", rows);
            prop_assert!(cols <= 1e-8, "column marginal off by {}", cols);
        }
        let report = check_entropy_lemma(&out, &input).unwrap();
        prop_assert!(report.all_satisfied());
    }

    #[test]
    fn solvers_are_deterministic(models in prop::collection::vec(simplex(8), 2..4)) {
        let input = EnsembleInput::with_shared_kernel(ensemble(&models), line_kernel(8, 0.05)).unwrap();
        let params = SolverParams::new(0.05).with_max_iter(50);
        let a = balanced_barycenter(&input, &params).unwrap();
        let b = balanced_barycenter(&input, &params).unwrap();
        prop_assert_eq!(a.barycenter.mass(), b.barycenter.mass());
        let a = unbalanced_barycenter(&input, &params).unwrap();
        let b = unbalanced_barycenter(&input, &params).unwrap();
        prop_assert_eq!(a.barycenter.mass(), b.barycenter.mass());
    }

    #[test]
    fn unbalanced_large_penalty_tends_to_hellinger_mean(models in prop::collection::vec(simplex(5), 2..4)) {
        let e = ensemble(&models);
        let identity = Arc::new(GroundMetric::identity(e.shared_support().unwrap().clone()));
        let input = EnsembleInput::with_shared_kernel(e, identity).unwrap();
        let params = SolverParams::new(1e-3).with_kl_lambda(1e3).with_max_iter(10_000).with_tolerance(1e-14);
        let out = unbalanced_barycenter(&input, &params).unwrap();
        let w = 1.0 / models.len() as f64;
        for (j, &p) in out.barycenter.mass().iter().enumerate() {
            let target: f64 = models.iter().map(|m| w * m[j].sqrt()).sum();
            prop_assert!((p.sqrt() - target).abs() <= 1e-3, "bin {}: {} vs {}", j, p.sqrt(), target);
        }
    }

    #[test]
    fn multilabel_output_is_bounded(
        scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 10), 2..5),
        top_n in 1usize..4,
    ) {
        let params = SolverParams::new(0.1).with_max_iter(50);
        let diag = DiagonalKernelParams::new(top_n, 1e-3).unwrap();
        let weights = EnsembleWeights::uniform(scores.len()).unwrap();
        let out = multilabel_ensemble(&scores, Some(weights), &params, &diag).unwrap();
        let max_in = scores.iter().flatten().cloned().fold(0.0, f64::max);
        // observed bound constant for the diagonal top-N kernel
        const C: f64 = 1.0;
        prop_assert!(out.iter().all(|&x| (0.0..=max_in * C + 1e-12).contains(&x)), "{:?} vs {}", out, max_in);
    }
}
