//! Sequential vs data-parallel paths on the two hot loops: long-path pool
//! scoring and Gaussian parameter-draw evaluation. The parallel side goes
//! through the same fixed-chunk reductions as the library (results are
//! bit-identical to the sequential side by construction).

use criterion::{criterion_group, criterion_main, Criterion};
use poolcast::estimate::grad;
use poolcast::models::{simulate_dgp_path, Ar1Params, Arch1Params, DgpParams};
use poolcast::par;
use poolcast::pool::{ConstituentParams, LinearPool, WeightVector};
use poolcast::rng;
use poolcast::scoring::ScoringRule;
use std::hint::black_box;

fn bench_pool(eta: f64) -> LinearPool {
    LinearPool::new(
        WeightVector::from_eta(eta).unwrap(),
        vec![
            ConstituentParams::Ar1(Ar1Params::new(0.02, 0.45, 0.8).unwrap()),
            ConstituentParams::Arch1(Arch1Params::new(0.0, 0.25, 0.55).unwrap()),
        ],
    )
    .unwrap()
}

fn bench_path_scoring(c: &mut Criterion) {
    let path = simulate_dgp_path(&DgpParams::default(), 200_000, &mut rng::stream(1, "bench", 0));
    let y = path.y;
    let pool = bench_pool(0.55);
    let rule = ScoringRule::Censored { threshold: -0.66 };

    let mut group = c.benchmark_group("path_scoring_200k");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let scores =
                par::map_indices(y.len() - 1, |i| grad::pool_score(&pool, rule, y[i], y[i + 1]));
            black_box(par::sum(&scores) / scores.len() as f64)
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let scores = par::map_indices_seq(y.len() - 1, |i| {
                grad::pool_score(&pool, rule, y[i], y[i + 1])
            });
            black_box(par::sum_seq(&scores) / scores.len() as f64)
        })
    });
    group.finish();
}

fn bench_gradient_accumulation(c: &mut Criterion) {
    let path = simulate_dgp_path(&DgpParams::default(), 100_000, &mut rng::stream(2, "bench", 0));
    let y = path.y;
    let pool = bench_pool(0.4);
    let rule = ScoringRule::LogScore;

    let mut group = c.benchmark_group("score_gradients_100k");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let rows = par::map_indices(y.len() - 1, |i| {
                grad::pool_score_grad(&pool, rule, y[i], y[i + 1])
            });
            black_box(rows.len())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let rows = par::map_indices_seq(y.len() - 1, |i| {
                grad::pool_score_grad(&pool, rule, y[i], y[i + 1])
            });
            black_box(rows.len())
        })
    });
    group.finish();
}

fn bench_draw_scoring(c: &mut Criterion) {
    // The empirical pipeline's inner loop: score many parameter draws on a
    // fixed holdout window.
    let path = simulate_dgp_path(&DgpParams::default(), 1400, &mut rng::stream(3, "bench", 0));
    let holdout: Vec<f64> = path.y[140..].to_vec();
    let prev = path.y[139];
    let rule = ScoringRule::LogScore;
    let n_draws = 256usize;

    let score_draw = |k: usize| {
        let eta = 0.2 + 0.6 * (k as f64 / n_draws as f64);
        let pool = bench_pool(eta);
        let mut acc = 0.0;
        for i in 0..holdout.len() {
            let y_prev = if i == 0 { prev } else { holdout[i - 1] };
            acc += grad::pool_score(&pool, rule, y_prev, holdout[i]);
        }
        acc / holdout.len() as f64
    };

    let mut group = c.benchmark_group("parameter_draws_256x1260");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(par::map_indices(n_draws, score_draw)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(par::map_indices_seq(n_draws, score_draw)))
    });
    group.finish();
}

criterion_group!(benches, bench_path_scoring, bench_gradient_accumulation, bench_draw_scoring);
criterion_main!(benches);
