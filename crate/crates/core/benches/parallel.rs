//! Data-parallel core against single-threaded execution.
//!
//! With the `parallel` feature each workload runs once inside a one-thread
//! pool and once on the default pool; without it only the sequential path
//! exists.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locsvm::composer::{fit_composed, RegionSettings};
use locsvm::experiments::mc_risk;
use locsvm::regionalization::{regionalize, WeightKind, WeightScheme};
use locsvm::robustness::{default_probes, Auditor, ContaminationSpec};
use locsvm::{ComposedModel, Dataset, Kernel, SmoothLoss, SyntheticTask, TaskKind, TrainConfig};

fn task() -> SyntheticTask {
    SyntheticTask::new(TaskKind::SineRegression { noise: 0.2 }, 2, 1).unwrap()
}

fn scheme(data: &Dataset) -> WeightScheme {
    WeightScheme::new(
        regionalize(data.xs(), 4, 0.25, 10, 1).unwrap(),
        WeightKind::NormalizedIndicator,
    )
    .unwrap()
}

fn settings() -> Vec<RegionSettings> {
    vec![
        RegionSettings {
            kernel: Kernel::gaussian_rbf(1.0, 2).unwrap(),
            lambda: 0.5,
        };
        4
    ]
}

fn fit(data: &Dataset) -> ComposedModel {
    fit_composed(
        data,
        &scheme(data),
        &settings(),
        SmoothLoss::LogisticRegression,
        &TrainConfig::new(0.5),
    )
    .unwrap()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

#[cfg(feature = "parallel")]
fn run_modes(c: &mut Criterion, group: &str, n: usize, work: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, n), |b| {
            b.iter(|| pool.install(&work))
        });
    }
    g.finish();
}

#[cfg(not(feature = "parallel"))]
fn run_modes(c: &mut Criterion, group: &str, n: usize, work: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.bench_function(BenchmarkId::new("sequential", n), |b| b.iter(&work));
    g.finish();
}

fn gram(c: &mut Criterion) {
    let data = task().generate(800).unwrap();
    let kernel = Kernel::gaussian_rbf(1.0, 2).unwrap();
    run_modes(c, "gram", 800, || {
        black_box(kernel.gram(data.xs()).unwrap());
    });
}

fn composed_fit(c: &mut Criterion) {
    let data = task().generate(800).unwrap();
    run_modes(c, "fit_composed", 800, || {
        black_box(fit(&data));
    });
}

fn risk(c: &mut Criterion) {
    let t = task();
    let model = fit(&t.generate(400).unwrap());
    let eval = t.evaluation_sample(20_000).unwrap();
    run_modes(c, "mc_risk", 20_000, || {
        black_box(mc_risk(&model, &eval, SmoothLoss::LogisticRegression).unwrap());
    });
}

fn influence(c: &mut Criterion) {
    let data = task().generate(400).unwrap();
    let model = fit(&data);
    let auditor = Auditor::new(
        &data,
        &model,
        TrainConfig::new(0.5),
        default_probes(&data, 512).unwrap(),
    )
    .unwrap();
    let spec = ContaminationSpec::dirac(vec![0.0, 0.0], 5.0);
    run_modes(c, "influence", 400, || {
        black_box(auditor.influence(&spec).unwrap());
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gram, composed_fit, risk, influence
}
criterion_main!(benches);
