use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn l2opt(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_l2opt"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = l2opt(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

#[test]
fn gen_writes_instances() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "3", "gen", "--n", "7", "--count", "2"]);
    let text = std::fs::read_to_string(dir.path().join("instances_n7_s3.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 14);
    assert!(text.starts_with("instance,node,x,y"));
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, "n = 6\nepochs = 2\nbatches_per_epoch = 1\nbatch_size = 4\ntotal_steps = 4\nschedule = 1:2\nd = 8\nlayers = 1\nval_instances = 4\nval_steps = 5\n").unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        ok(&out, &["--seed", "5", "train", "--config", cfg.to_str().unwrap(), "--epochs", "3"]);
        (std::fs::read(out.join("metrics.csv")).unwrap(), std::fs::read(out.join("model.ckpt")).unwrap(), out)
    };
    let (m1, c1, out1) = run("a");
    let (m2, c2, _) = run("b");
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    let metrics = String::from_utf8(m1).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    assert!(std::fs::read_to_string(out1.join("config.txt")).unwrap().contains("epochs = 3"));

    let ckpt = out1.join("model.ckpt");
    let shown = ok(dir.path(), &["inspect-ckpt", ckpt.to_str().unwrap()]);
    assert!(shown.contains("d = 8") && shown.contains("dec.key"));
    let eval = ok(dir.path(), &["eval", "--ckpt", ckpt.to_str().unwrap(), "--n", "9", "--count", "3", "--steps", "10"]);
    assert!(eval.contains("mean best cost"), "{eval}");
    assert!(dir.path().join("eval.csv").exists());

    std::fs::write(&ckpt, &c1[..c1.len() - 3]).unwrap();
    let bad = l2opt(dir.path(), &["inspect-ckpt", ckpt.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("corrupt"));
}

#[test]
fn bench_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "9", "bench", "--n", "8", "--count", "10", "--steps", "30", "--methods", "nearest,farthest,fi,bi+restarts,random-2opt,held-karp"];
    let table = ok(dir.path(), &args);
    assert!(table.contains("held-karp"));
    let first = std::fs::read(dir.path().join("report.csv")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(first, std::fs::read(dir.path().join("report.csv")).unwrap());
}

#[test]
fn bench_on_tsplib_uses_known_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let eil = data("eil51.tsp");
    ok(dir.path(), &["bench", "--tsplib", eil.to_str().unwrap(), "--methods", "farthest,held-karp"]);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let farthest = csv.lines().find(|l| l.contains(",farthest,")).unwrap();
    let gap: f64 = farthest.split(',').nth(6).unwrap().parse().unwrap();
    assert!(gap > 0.0 && gap < 20.0, "{farthest}");
    let oracle = csv.lines().find(|l| l.contains(",held-karp,")).unwrap();
    assert!(oracle.contains("refused"), "{oracle}");
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!l2opt(dir.path(), &["bench", "--methods", "3-opt"]).status.success());
    assert!(!l2opt(dir.path(), &["train", "--set", "lr"]).status.success());
    assert!(!l2opt(dir.path(), &["train", "--set", "colour=blue"]).status.success());
    assert!(!l2opt(dir.path(), &["gen", "--n", "3"]).status.success());
}
