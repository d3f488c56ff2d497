use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use l2opt::checkpoint::{load_checkpoint, save_checkpoint};
use l2opt::config::{apply_key, load_train_config, render_config};
use l2opt::eval::{evaluate_policy, initial_tours, EvalMode};
use l2opt::instances::generate_instances;
use l2opt::oracle::{held_karp_capped, mean_gap, HELD_KARP_DEFAULT_CAP};
use l2opt::report::{fmt_sig, median, run_benchmark, BenchConfig, InstanceSet, Method, SetDescriptor};
use l2opt::rng::derive;
use l2opt::train::{train_with, write_metrics_csv, TrainConfig};
use l2opt::tsplib::{known_optimum, read_tsplib};
use l2opt::{par, Instance};

#[derive(Parser)]
#[command(name = "l2opt", version, about = "Learned 2-opt local search for the Euclidean TSP")]
struct Cli {
    /// Master seed
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate uniform random instances as CSV
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train a policy
    Train(TrainArgs),
    /// Roll a trained policy on random or TSPLIB instances
    Eval(EvalArgs),
    /// Compare methods on a shared instance set
    Bench(BenchArgs),
    /// Solve instances exactly with Held-Karp
    Oracle {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = HELD_KARP_DEFAULT_CAP)]
        cap: usize,
    },
    /// Print the configuration and tensors stored in a checkpoint
    InspectCkpt { path: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Any configuration key, e.g. `--set schedule=1:4,10:8`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Record wallclock times in the metrics log
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct InstanceArgs {
    /// Problem size for random instances
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 256)]
    count: usize,
    /// TSPLIB files to use instead of random instances
    #[arg(long, num_args = 1..)]
    tsplib: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    set: InstanceArgs,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Take the most likely move instead of sampling
    #[arg(long)]
    greedy: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    set: InstanceArgs,
    /// Comma-separated methods: nearest, random, farthest, fi, bi, fi+restarts,
    /// bi+restarts, random-2opt, policy:<ckpt>, held-karp
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = HELD_KARP_DEFAULT_CAP)]
    oracle_cap: usize,
    #[arg(long)]
    timing: bool,
}

fn load_set(a: &InstanceArgs, seed: u64) -> Result<InstanceSet> {
    if a.tsplib.is_empty() {
        return Ok(InstanceSet::uniform(a.n, a.count, seed)?);
    }
    let mut instances = Vec::new();
    let mut optima = Vec::new();
    let mut names = Vec::new();
    for p in &a.tsplib {
        let t = read_tsplib(p).with_context(|| format!("reading {}", p.display()))?;
        optima.push(known_optimum(&t.name));
        names.push(t.name);
        instances.push(t.instance);
    }
    let n = instances.iter().map(Instance::len).max().unwrap_or(0);
    Ok(InstanceSet {
        descriptor: SetDescriptor {
            name: names.join("+"),
            n,
            count: instances.len(),
            seed,
        },
        known_optima: optima.into_iter().collect(),
        instances,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(out: &Path, n: usize, count: usize, seed: u64) -> Result<()> {
    let insts = generate_instances(n, count, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "node", "x", "y"])?;
    for (k, inst) in insts.iter().enumerate() {
        for (i, p) in inst.coords().iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
    }
    let path = out.join(format!("instances_n{n}_s{seed}.csv"));
    write_file(&path, &w.into_inner()?)?;
    println!("wrote {count} instances to {}", path.display());
    Ok(())
}

fn cmd_train(out: &Path, a: &TrainArgs, seed: u64) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
        apply_key(&mut cfg, k.trim(), v.trim())?;
    }
    cfg.record_timing |= a.timing;
    cfg.validate()?;
    write_file(&out.join("config.txt"), render_config(&cfg).as_bytes())?;
    let ckpt = out.join("model.ckpt");
    let outcome = train_with(&cfg, |s, net| {
        save_checkpoint(net, &ckpt)?;
        let gap = s.val_gap_pct.map(|g| format!(" val gap {}%", fmt_sig(g))).unwrap_or_default();
        println!("epoch {:>3}  T={}  lr={}{gap}", s.epoch, s.episode_length, fmt_sig(s.lr));
        Ok(())
    })?;
    let mut buf = Vec::new();
    write_metrics_csv(&outcome.metrics, &mut buf)?;
    write_file(&out.join("metrics.csv"), &buf)?;
    if let Some(msg) = outcome.halted {
        bail!("training halted: {msg}; last good checkpoint kept at {}", ckpt.display());
    }
    println!("{} updates; checkpoint at {}", outcome.updates, ckpt.display());
    Ok(())
}

fn cmd_eval(out: &Path, a: &EvalArgs, seed: u64) -> Result<()> {
    let net = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let set = load_set(&a.set, seed)?;
    let starts = initial_tours(&set.instances, derive(seed, 10));
    let mode = if a.greedy { EvalMode::Greedy } else { EvalMode::Sample };
    let rollouts = evaluate_policy(&net, &set.instances, &starts, a.steps, mode, derive(seed, 11))?;
    let costs: Vec<f64> = rollouts.iter().map(|r| r.best_cost()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "start_cost", "best_cost", "best_step"])?;
    for (k, (r, s)) in rollouts.iter().zip(&starts).enumerate() {
        w.write_record([k.to_string(), fmt_sig(s.length()), fmt_sig(r.best_cost()), r.best_step.to_string()])?;
    }
    write_file(&out.join("eval.csv"), &w.into_inner()?)?;
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    print!("{} instances, {} steps: mean best cost {}, median {}", costs.len(), a.steps, fmt_sig(mean), fmt_sig(median(&costs)));
    if let Some(opt) = &set.known_optima {
        print!(", mean gap {}%", fmt_sig(mean_gap(&costs, opt)?));
    }
    println!();
    Ok(())
}

fn cmd_bench(out: &Path, a: &BenchArgs, seed: u64) -> Result<()> {
    let set = load_set(&a.set, seed)?;
    let methods = a.methods.iter().map(|m| Method::parse(m)).collect::<l2opt::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        methods,
        steps: a.steps,
        seed,
        oracle_cap: a.oracle_cap,
        record_timing: a.timing,
    };
    let (report, _) = run_benchmark(&set, &cfg)?;
    write_file(&out.join("report.csv"), report.to_csv()?.as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_oracle(out: &Path, n: usize, count: usize, cap: usize, seed: u64) -> Result<()> {
    let insts = generate_instances(n, count, seed)?;
    let tours = par::map_indexed(&insts, |_, i| held_karp_capped(i, cap))
        .into_iter()
        .collect::<l2opt::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "cost", "tour"])?;
    for (k, t) in tours.iter().enumerate() {
        let order: Vec<String> = t.order().iter().map(usize::to_string).collect();
        w.write_record([k.to_string(), fmt_sig(t.length()), order.join(" ")])?;
    }
    write_file(&out.join("oracle.csv"), &w.into_inner()?)?;
    let mean = tours.iter().map(|t| t.length()).sum::<f64>() / count as f64;
    println!("{count} instances of n={n}: mean optimal cost {}", fmt_sig(mean));
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let net = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let c = net.config();
    let mut o = std::io::stdout().lock();
    writeln!(o, "d = {}\nlayers = {}\nclip = {}", c.d, c.layers, c.clip)?;
    writeln!(
        o,
        "use_gcn = {}\nuse_lstm = {}\nuse_bidirectional = {}\nuse_best_solution = {}\nshare_encoders = {}",
        c.use_gcn, c.use_lstm, c.use_bidirectional, c.use_best_solution, c.share_encoders
    )?;
    let p = net.params();
    writeln!(o, "{} tensors, {} scalars", p.len(), p.scalar_count())?;
    for (name, t) in p.names().iter().zip(p.tensors()) {
        writeln!(o, "  {name:<28} {:?}", t.shape())?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if !matches!(cli.cmd, Cmd::InspectCkpt { .. }) {
        fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    }
    match &cli.cmd {
        Cmd::Gen { n, count } => cmd_gen(&cli.out, *n, *count, cli.seed),
        Cmd::Train(a) => cmd_train(&cli.out, a, cli.seed),
        Cmd::Eval(a) => cmd_eval(&cli.out, a, cli.seed),
        Cmd::Bench(a) => cmd_bench(&cli.out, a, cli.seed),
        Cmd::Oracle { n, count, cap } => cmd_oracle(&cli.out, *n, *count, *cap, cli.seed),
        Cmd::InspectCkpt { path } => cmd_inspect(path),
    }
}
