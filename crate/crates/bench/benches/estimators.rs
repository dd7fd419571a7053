use std::hint::black_box;

use attestpo::estimator::{solve_window, WindowProblem};
use attestpo::init::linear_init;
use attestpo::mekf::run_ekf;
use attestpo::{EstimatorConfig, Mode};
use attestpo_bench::{first_window, prior, record};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn window_solves(c: &mut Criterion) {
    let out = record(1.0);
    let prior = prior(&out);
    let window = first_window(&out, 10);
    let mut group = c.benchmark_group("window_solve");
    for mode in [Mode::Qua, Mode::Rod] {
        let config = EstimatorConfig::default().with_mode(mode);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &config, |b, config| {
            b.iter(|| solve_window(black_box(&window), &prior, config).unwrap())
        });
    }
    group.finish();
}

fn initializer(c: &mut Criterion) {
    let out = record(1.0);
    let prior = prior(&out);
    let mut group = c.benchmark_group("linear_init");
    for (len, order) in [(10, 6), (100, 40)] {
        let window = first_window(&out, len);
        let config = EstimatorConfig::default().with_window(len as f64 * 0.01, order);
        let problem = WindowProblem::new(&window, &prior, &config).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("order{order}")), |b| {
            b.iter(|| linear_init(black_box(&problem)).unwrap())
        });
    }
    group.finish();
}

fn ekf_track(c: &mut Criterion) {
    let out = record(20.0);
    let prior = prior(&out);
    let config = EstimatorConfig::default();
    c.bench_function("ekf_track_20s", |b| {
        b.iter(|| run_ekf(black_box(&out.samples), &prior, &config.noise, &config.earth).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = window_solves, initializer, ekf_track
}
criterion_main!(benches);
