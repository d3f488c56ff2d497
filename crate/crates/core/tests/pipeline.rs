use std::path::PathBuf;

use l2opt::checkpoint::{load_checkpoint, save_checkpoint};
use l2opt::config::{apply_config_text, render_config};
use l2opt::eval::{evaluate_policy, initial_tours, EvalMode};
use l2opt::instances::generate_instances;
use l2opt::net::NetConfig;
use l2opt::report::{run_benchmark, BenchConfig, InstanceSet, Method, SetDescriptor};
use l2opt::train::{train, TrainConfig};
use l2opt::tsplib::{known_optimum, read_tsplib};

fn tiny() -> TrainConfig {
    TrainConfig {
        n: 7,
        epochs: 2,
        batches_per_epoch: 2,
        batch_size: 4,
        total_steps: 4,
        schedule: vec![(1, 2), (2, 4)],
        net: NetConfig::new(8, 1),
        val_instances: 4,
        val_steps: 10,
        seed: 31,
        ..TrainConfig::default()
    }
}

fn costs(r: &[l2opt::eval::Rollout]) -> Vec<f64> {
    r.iter().map(|x| x.best_cost()).collect()
}

#[test]
fn checkpoint_round_trip_preserves_rollouts() {
    let out = train(&tiny()).unwrap();
    assert_eq!(out.metrics.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&out.net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let insts = generate_instances(7, 6, 2).unwrap();
    let starts = initial_tours(&insts, 3);
    for mode in [EvalMode::Sample, EvalMode::Greedy] {
        let a = evaluate_policy(&out.net, &insts, &starts, 15, mode, 9).unwrap();
        let b = evaluate_policy(&back, &insts, &starts, 15, mode, 9).unwrap();
        assert_eq!(costs(&a), costs(&b));
    }
}

#[test]
fn rendered_config_reloads() {
    let cfg = TrainConfig {
        reward_clip: None,
        lr: 2.5e-4,
        ..tiny()
    };
    let mut back = TrainConfig::default();
    apply_config_text(&mut back, &render_config(&cfg)).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn rollouts_do_not_depend_on_pool_size() {
    let net = train(&tiny()).unwrap().net;
    let insts = generate_instances(9, 12, 5).unwrap();
    let starts = initial_tours(&insts, 6);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| costs(&evaluate_policy(&net, &insts, &starts, 20, EvalMode::Sample, 1).unwrap()))
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn tsplib_benchmark_uses_published_optima() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/eil51.tsp");
    let t = read_tsplib(path).unwrap();
    let set = InstanceSet {
        descriptor: SetDescriptor {
            name: t.name.clone(),
            n: t.dimension,
            count: 1,
            seed: 0,
        },
        known_optima: known_optimum(&t.name).map(|o| vec![o]),
        instances: vec![t.instance],
    };
    let cfg = BenchConfig {
        methods: ["farthest", "bi", "held-karp"].iter().map(|m| Method::parse(m).unwrap()).collect(),
        steps: 100,
        ..BenchConfig::default()
    };
    let (report, _) = run_benchmark(&set, &cfg).unwrap();
    let far = &report.rows[0];
    let gap = far.mean_gap_pct.unwrap();
    assert!((gap - (far.mean_cost.unwrap() / 426.0 - 1.0) * 100.0).abs() < 1e-9);
    let bi = &report.rows[1];
    assert!(bi.mean_cost.unwrap() < bi.mean_start_cost.unwrap());
    assert!(report.rows[2].mean_cost.is_none());
    assert!(report.rows[2].note.starts_with("refused"));
}
