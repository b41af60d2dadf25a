//! Data-parallel stages on the default rayon pool against a one-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gridstate::ensemble::{EnsembleConfig, EnsembleModel, SplitSpec};
use gridstate::measurement::{add_gaussian_noise, default_plan, evaluate_h, Preset};
use gridstate::neural::TrainingConfig;
use gridstate::parallel;
use gridstate::pipeline::{generate_dataset, synth_profile, Label, NoiseModel, SynthParams};
use gridstate::powerflow::{solve_power_flow, LoadScenario};
use gridstate::wls::{WlsEstimator, WlsOptions};
use gridstate::ybus::build_ybus;
use gridstate::{seed, MeasurementVector, NetworkCase};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let build = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    vec![("sequential", build(1)), ("parallel", build(threads))]
}

fn dataset_generation(c: &mut Criterion) {
    let case = NetworkCase::builtin("ieee14").unwrap();
    let plan = default_plan(&case, Preset::Full14).unwrap();
    let profile = synth_profile(96, 1, &SynthParams::default()).unwrap();
    let noise = NoiseModel::Gaussian { snr_db: 50.0 };
    let mut group = c.benchmark_group("dataset_96h_ieee14");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| generate_dataset(&case, &plan, &profile, &noise, 3).unwrap()))
        });
    }
    group.finish();
}

fn monte_carlo_wls(c: &mut Criterion) {
    let case = NetworkCase::builtin("ieee30").unwrap();
    let plan = default_plan(&case, Preset::Bench30).unwrap();
    let ybus = build_ybus(&case).unwrap();
    let truth = solve_power_flow(&case, &LoadScenario::uniform(0, 1.0, 30), &Default::default())
        .unwrap()
        .state;
    let clean = MeasurementVector::full(0, evaluate_h(&truth, &plan, &ybus));
    let estimator = WlsEstimator::new(&case, &plan).unwrap();
    let mut group = c.benchmark_group("wls_monte_carlo_200_ieee30");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    parallel::map_range(200, |t| {
                        let z = add_gaussian_noise(&clean, 40.0, seed::derive(9, "trial", t as u64));
                        estimator.estimate(&z, &WlsOptions::default()).unwrap().objective
                    })
                })
            })
        });
    }
    group.finish();
}

fn batch_inference(c: &mut Criterion) {
    let case = NetworkCase::builtin("ieee14").unwrap();
    let plan = default_plan(&case, Preset::Full14).unwrap();
    let profile = synth_profile(500, 2, &SynthParams::default()).unwrap();
    let data = generate_dataset(&case, &plan, &profile, &NoiseModel::Gaussian { snr_db: 50.0 }, 4).unwrap();
    let split = SplitSpec::new(data.len(), 5);
    let config = EnsembleConfig {
        training: TrainingConfig {
            epochs: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = EnsembleModel::fit(
        &data.inputs(&split.base_train),
        &data.states(&split.base_train, Label::True),
        &data.inputs(&split.meta_train),
        &data.states(&split.meta_train, Label::True),
        &config,
    )
    .unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let inputs = data.inputs(&all);
    let mut group = c.benchmark_group("ensemble_batch_500_ieee14");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| model.predict_batch(&inputs).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, dataset_generation, monte_carlo_wls, batch_inference);
criterion_main!(benches);
