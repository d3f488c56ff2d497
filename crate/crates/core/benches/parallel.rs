use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use l2opt::eval::{evaluate_policy, initial_tours, EvalMode};
use l2opt::instances::generate_instances;
use l2opt::net::{NetConfig, PolicyNet};
use l2opt::oracle::held_karp;
use l2opt::par;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn rollouts(c: &mut Criterion) {
    let insts = generate_instances(20, 32, 1).unwrap();
    let starts = initial_tours(&insts, 2);
    let net = PolicyNet::init(NetConfig::new(32, 2), 3).unwrap();
    let mut group = c.benchmark_group("policy_rollout_n20_x32");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| evaluate_policy(&net, &insts, &starts, 10, EvalMode::Sample, 4).unwrap()))
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let insts = generate_instances(13, 16, 5).unwrap();
    let mut group = c.benchmark_group("held_karp_n13_x16");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| par::map_indexed(&insts, |_, i| held_karp(i).unwrap().length())))
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts, oracle);
criterion_main!(benches);
