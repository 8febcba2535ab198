//! Parallel against sequential execution for the hot paths: the matrix
//! products inside every iteration and whole benchmark trials.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gfom::amp::{run_bayes_amp_pr_with, sample_glm};
use gfom::bench::{run_pr_bench, Algorithm, PrBenchConfig};
use gfom::par::{self, Exec};
use gfom::phase_retrieval::{spectral_init, DEFAULT_EPSILON};
use gfom::prior::{Channel, JointPrior};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn products(c: &mut Criterion) {
    let sample = sample_glm(
        &JointPrior::GaussianWithOverlap { a: 0.0 },
        &JointPrior::point_mass(),
        &Channel::SquaredNoiseless,
        1000,
        400,
        1,
    )
    .unwrap();
    let f = vec![0.5; 1000];
    let mut group = c.benchmark_group("x_transpose_f");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| par::col_dots(exec, &sample.x, black_box(&f))));
    }
    group.finish();
}

fn bayes_amp(c: &mut Criterion) {
    let sample = sample_glm(
        &JointPrior::GaussianWithOverlap { a: 0.0 },
        &JointPrior::point_mass(),
        &Channel::SquaredNoiseless,
        1000,
        400,
        2,
    )
    .unwrap();
    let (theta0, _) = spectral_init(&sample, DEFAULT_EPSILON).unwrap();
    let mut group = c.benchmark_group("bayes_amp_pr_10_steps");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_bayes_amp_pr_with(exec, &sample, black_box(&theta0), 0.8749, 10).unwrap())
        });
    }
    group.finish();
}

fn trials(c: &mut Criterion) {
    let cfg = PrBenchConfig {
        n: 400,
        d: 160,
        trials: 4,
        t_max: 10,
        master_seed: 3,
        epsilon: DEFAULT_EPSILON,
        algorithms: vec![Algorithm::BayesAmp, Algorithm::Gd { eta: 10.0 }, Algorithm::Taf { alpha: 0.6, gamma: 0.7 }],
        quadrature_order: 32,
        record_wall_time: false,
        output: None,
    };
    let mut group = c.benchmark_group("pr_bench_4_trials");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_pr_bench(black_box(&cfg), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, products, bayes_amp, trials);
criterion_main!(benches);
