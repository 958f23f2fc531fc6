use locsvm::composer::{fit_composed, fit_global, RegionSettings};
use locsvm::regionalization::{regionalize, WeightKind, WeightScheme};
use locsvm::robustness::{default_probes, Auditor, ContaminationSpec};
use locsvm::solver::train;
use locsvm::{Dataset, Kernel, SmoothLoss, TrainConfig, WeightedSample};
use proptest::prelude::*;

fn dataset(points: Vec<(f64, f64, f64)>, loss: SmoothLoss) -> Dataset {
    let xs = points.iter().map(|&(a, b, _)| vec![a, b]).collect();
    let ys = points
        .iter()
        .map(|&(_, _, y)| {
            if loss.is_classification() {
                y.signum()
            } else {
                y
            }
        })
        .collect();
    Dataset::new(xs, ys).unwrap()
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec(
        (
            -3.0..3.0f64,
            -3.0..3.0f64,
            prop_oneof![-2.0..-0.1f64, 0.1..2.0f64],
        ),
        n,
    )
}

fn loss() -> impl Strategy<Value = SmoothLoss> {
    prop_oneof![
        Just(SmoothLoss::LogisticClassification),
        Just(SmoothLoss::LogisticRegression)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_region_equals_global(pts in points(3..40), loss in loss(), gamma in 0.2..3.0f64, lambda in 0.05..2.0f64) {
        let data = dataset(pts, loss);
        let kernel = Kernel::gaussian_rbf(gamma, 2).unwrap();
        let scheme = WeightScheme::new(regionalize(data.xs(), 1, 0.0, 1, 0).unwrap(), WeightKind::NormalizedIndicator).unwrap();
        let composed = fit_composed(&data, &scheme, &[RegionSettings { kernel, lambda }], loss, &TrainConfig::new(lambda)).unwrap();
        let global = fit_global(&data, &kernel, loss, &TrainConfig::new(lambda)).unwrap();
        for p in default_probes(&data, 32).unwrap() {
            prop_assert!((composed.predict(&p).value - global.predict(&p).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn trained_models_respect_norm_bounds(pts in points(1..40), loss in loss(), gamma in 0.2..3.0f64, lambda in 0.01..2.0f64) {
        let data = dataset(pts, loss);
        let kernel = Kernel::gaussian_rbf(gamma, 2).unwrap();
        let sample = WeightedSample::uniform(data.xs().to_vec(), data.ys().to_vec()).unwrap();
        let m = train(&sample, &kernel, loss, &TrainConfig::new(lambda)).unwrap();
        let h = m.h_norm();
        // ‖k‖∞ = 1 and |L|₁ = 1
        prop_assert!(h <= 1.0 / lambda + 1e-9);
        for p in default_probes(&data, 64).unwrap() {
            prop_assert!(m.predict(&p).unwrap().abs() <= h + 1e-12);
        }
    }

    #[test]
    fn composed_influence_decomposes(pts in points(24..48), z in (-3.5..3.5f64, -3.5..3.5f64), y in -8.0..8.0f64, tau in 0.0..0.6f64) {
        let loss = SmoothLoss::LogisticRegression;
        let data = dataset(pts, loss);
        let part = regionalize(data.xs(), 3, tau, 4, 1).unwrap();
        let scheme = WeightScheme::new(part, WeightKind::SmoothBump { bandwidth: 1.0 }).unwrap();
        let settings = vec![RegionSettings { kernel: Kernel::gaussian_rbf(1.0, 2).unwrap(), lambda: 0.5 }; scheme.num_regions()];
        let model = fit_composed(&data, &scheme, &settings, loss, &TrainConfig::new(0.5)).unwrap();
        let auditor = Auditor::new(&data, &model, TrainConfig::new(0.5), default_probes(&data, 64).unwrap()).unwrap();
        let est = auditor.influence(&ContaminationSpec::dirac(vec![z.0, z.1], y)).unwrap();
        prop_assert!(est.decomposition_residual <= 1e-10);
        prop_assert!(est.sup_norm_estimate <= auditor.bounds().if_bound_rough);
        prop_assert!(auditor.tv_refined_if_bound(&[z.0, z.1], y) <= auditor.bounds().if_bound_rough);
        for (b, q) in &est.per_region {
            let touched = est.affected_regions.contains(b);
            prop_assert_eq!(q.perturbed.is_some(), touched);
        }
    }
}
