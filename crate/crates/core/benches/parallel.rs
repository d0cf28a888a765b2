//! Compares the data-parallel replica map against the sequential fallback on
//! a small seed-replicated training workload.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use curlab_core::data::{generate_synthetic, split, SyntheticSpec};
use curlab_core::env::EnvConfig;
use curlab_core::experiment::{build_plan, score_model, MethodVariant};
use curlab_core::net::NetConfig;
use curlab_core::parallel;
use curlab_core::rl::{derive_seed, AlgoConfig, Algorithm};

struct Workload {
    plan: curlab_core::experiment::TrainingPlan,
    algo: AlgoConfig,
    net: NetConfig,
    series: Arc<curlab_core::data::ProcessedSeries>,
    test: curlab_core::data::Span,
    env: EnvConfig,
    seeds: Vec<u64>,
}

fn workload(n_seeds: usize) -> Workload {
    let (series, _) = generate_synthetic(&SyntheticSpec {
        n_assets: 2,
        length: 400,
        ar_coeff: 0.9,
        signal_scale: 0.01,
        noise_scale: 0.01,
        seed: 7,
    })
    .unwrap();
    let series = Arc::new(series);
    let sp = split(&series, [0.6, 0.2, 0.2]).unwrap();
    let env = EnvConfig::new(vec!["asset_0".into(), "asset_1".into()], 10, 1.0);
    let mut algo = AlgoConfig::ds1(Algorithm::A2c);
    algo.steps_per_update = 64;
    let net = NetConfig {
        hidden: vec![16, 16],
        ..NetConfig::default()
    };
    let plan = build_plan(
        &MethodVariant::Baseline,
        &series,
        sp.train,
        Some(sp.validation),
        &env,
        &algo,
        &net,
        3,
    )
    .unwrap();
    Workload {
        plan,
        algo,
        net,
        series,
        test: sp.test,
        env,
        seeds: (0..n_seeds as u64).map(|i| derive_seed(11, i)).collect(),
    }
}

fn run_one(w: &Workload, seed: u64) -> f64 {
    let model = w.plan.train_one(&w.algo, &w.net, 2048, seed).unwrap();
    let rewards = score_model(&model, &w.series, w.test, &w.env).unwrap();
    rewards.iter().sum()
}

fn bench_replicas(c: &mut Criterion) {
    let mut group = c.benchmark_group("replica_map");
    group.sample_size(10);
    for n_seeds in [4usize, 8] {
        let w = workload(n_seeds);
        group.bench_with_input(BenchmarkId::new("sequential", n_seeds), &w, |b, w| {
            b.iter(|| parallel::map_seq(w.seeds.clone(), |s| run_one(w, s)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n_seeds), &w, |b, w| {
            b.iter(|| parallel::map(w.seeds.clone(), |s| run_one(w, s)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replicas);
criterion_main!(benches);
