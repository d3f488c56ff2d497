//! Benchmark runs over a shared instance set and their CSV/table output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::baselines::{farthest_insertion, local_search_2opt, nearest_insertion, random_insertion, LocalSearchConfig, PivotRule};
use crate::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, evaluate_random_policy, initial_tours, EvalMode};
use crate::oracle::{held_karp_capped, optimality_gap, HELD_KARP_DEFAULT_CAP};
use crate::par;
use crate::rng::derive;
use crate::tsp::{Instance, Tour};

/// Formats with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        format!("{x:.5e}")
    } else {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Method {
    Nearest,
    Random,
    Farthest,
    FirstImprovement,
    BestImprovement,
    FirstImprovementRestarts,
    BestImprovementRestarts,
    /// Uniformly random 2-opt moves.
    RandomTwoOpt,
    Policy(PathBuf),
    HeldKarp,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "nearest" => Self::Nearest,
            "random" | "random-insertion" => Self::Random,
            "farthest" => Self::Farthest,
            "fi" => Self::FirstImprovement,
            "bi" => Self::BestImprovement,
            "fi+restarts" => Self::FirstImprovementRestarts,
            "bi+restarts" => Self::BestImprovementRestarts,
            "random-2opt" => Self::RandomTwoOpt,
            "held-karp" => Self::HeldKarp,
            _ => match s.strip_prefix("policy:") {
                Some(p) if !p.is_empty() => Self::Policy(PathBuf::from(p)),
                _ => return Err(Error::Config(format!("unknown method {s:?}"))),
            },
        })
    }

    pub fn name(&self) -> String {
        match self {
            Self::Nearest => "nearest".into(),
            Self::Random => "random".into(),
            Self::Farthest => "farthest".into(),
            Self::FirstImprovement => "fi".into(),
            Self::BestImprovement => "bi".into(),
            Self::FirstImprovementRestarts => "fi+restarts".into(),
            Self::BestImprovementRestarts => "bi+restarts".into(),
            Self::RandomTwoOpt => "random-2opt".into(),
            Self::Policy(p) => format!("policy:{}", p.display()),
            Self::HeldKarp => "held-karp".into(),
        }
    }

    /// Improvement methods start from the shared initial tours and use the step budget.
    pub fn is_improvement(&self) -> bool {
        matches!(
            self,
            Self::FirstImprovement
                | Self::BestImprovement
                | Self::FirstImprovementRestarts
                | Self::BestImprovementRestarts
                | Self::RandomTwoOpt
                | Self::Policy(_)
        )
    }
}

/// Identifies the instance set of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct SetDescriptor {
    pub name: String,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct InstanceSet {
    pub descriptor: SetDescriptor,
    pub instances: Vec<Instance>,
    /// Known optimal costs (e.g. published TSPLIB optima) used as gap denominators.
    pub known_optima: Option<Vec<f64>>,
}

impl InstanceSet {
    pub fn uniform(n: usize, count: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            descriptor: SetDescriptor {
                name: "uniform".into(),
                n,
                count,
                seed,
            },
            instances: crate::instances::generate_instances(n, count, seed)?,
            known_optima: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub steps: usize,
    pub seed: u64,
    pub oracle_cap: usize,
    pub record_timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Vec::new(),
            steps: 200,
            seed: 0,
            oracle_cap: HELD_KARP_DEFAULT_CAP,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub mean_cost: Option<f64>,
    pub mean_gap_pct: Option<f64>,
    pub median_cost: Option<f64>,
    /// Mean cost of the start tours (improvement methods only).
    pub mean_start_cost: Option<f64>,
    pub steps: Option<usize>,
    pub wallclock_s: f64,
    /// Why the row was refused, if it was.
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub descriptor: SetDescriptor,
    pub rows: Vec<ReportRow>,
}

/// Per-instance outcomes kept alongside a report.
#[derive(Clone, Debug, Default)]
pub struct BenchmarkDetail {
    /// Best cost per instance for each row (empty when refused).
    pub costs: Vec<Vec<f64>>,
    /// Start tour of each instance shared by all improvement methods.
    pub starts: Vec<Tour>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

fn run_method(method: &Method, set: &InstanceSet, starts: &[Tour], cfg: &BenchConfig, k: usize) -> Result<Vec<f64>> {
    let inst = &set.instances;
    let seed = derive(cfg.seed, 100 + k as u64);
    let local = |rule: PivotRule, restarts: bool| -> Result<Vec<f64>> {
        let lc = LocalSearchConfig::new(rule, restarts, cfg.steps, 0)?;
        Ok(par::map_range(inst.len(), |i| {
            let c = LocalSearchConfig {
                rng_seed: derive(seed, i as u64),
                ..lc.clone()
            };
            local_search_2opt(&inst[i], &starts[i], &c).best.length()
        }))
    };
    match method {
        Method::Nearest => Ok(par::map_indexed(inst, |_, i| nearest_insertion(i).length())),
        Method::Farthest => Ok(par::map_indexed(inst, |_, i| farthest_insertion(i).length())),
        Method::Random => Ok(par::map_indexed(inst, |j, i| random_insertion(i, derive(seed, j as u64)).length())),
        Method::FirstImprovement => local(PivotRule::FirstImprovement, false),
        Method::BestImprovement => local(PivotRule::BestImprovement, false),
        Method::FirstImprovementRestarts => local(PivotRule::FirstImprovement, true),
        Method::BestImprovementRestarts => local(PivotRule::BestImprovement, true),
        Method::RandomTwoOpt => Ok(evaluate_random_policy(inst, starts, cfg.steps, seed)?
            .iter()
            .map(|r| r.best_cost())
            .collect()),
        Method::Policy(path) => {
            let net = load_checkpoint(path)?;
            Ok(evaluate_policy(&net, inst, starts, cfg.steps, EvalMode::Sample, seed)?
                .iter()
                .map(|r| r.best_cost())
                .collect())
        }
        Method::HeldKarp => {
            let tours: Result<Vec<Tour>> = par::map_indexed(inst, |_, i| held_karp_capped(i, cfg.oracle_cap)).into_iter().collect();
            Ok(tours?.iter().map(Tour::length).collect())
        }
    }
}

/// Evaluates every method on `set`; improvement methods share start tours.
pub fn run_benchmark(set: &InstanceSet, cfg: &BenchConfig) -> Result<(BenchmarkReport, BenchmarkDetail)> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no benchmark methods given".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("benchmark step budget must be positive".into()));
    }
    if set.instances.is_empty() {
        return Err(Error::Config("empty instance set".into()));
    }
    let starts = initial_tours(&set.instances, derive(cfg.seed, 10));
    let start_mean = mean(&starts.iter().map(Tour::length).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(cfg.methods.len());
    let mut costs = Vec::with_capacity(cfg.methods.len());
    for (k, m) in cfg.methods.iter().enumerate() {
        let t0 = Instant::now();
        let refused = match m {
            Method::HeldKarp => {
                let n = set.instances.iter().map(Instance::len).max().unwrap_or(0);
                (n > cfg.oracle_cap).then(|| format!("refused: n = {n} exceeds the oracle cap of {}", cfg.oracle_cap))
            }
            _ => None,
        };
        let c = match refused {
            Some(_) => Vec::new(),
            None => run_method(m, set, &starts, cfg, k)?,
        };
        let wall = if cfg.record_timing { t0.elapsed().as_secs_f64() } else { 0.0 };
        log::info!("{}: {} instances", m.name(), c.len());
        rows.push(ReportRow {
            method: m.name(),
            mean_cost: (!c.is_empty()).then(|| mean(&c)),
            mean_gap_pct: None,
            median_cost: (!c.is_empty()).then(|| median(&c)),
            mean_start_cost: (m.is_improvement() && !c.is_empty()).then_some(start_mean),
            steps: m.is_improvement().then_some(cfg.steps),
            wallclock_s: wall,
            note: refused.unwrap_or_default(),
        });
        costs.push(c);
    }
    let optima = match &set.known_optima {
        Some(o) => Some(o.clone()),
        None => cfg
            .methods
            .iter()
            .position(|m| *m == Method::HeldKarp)
            .filter(|&k| !costs[k].is_empty())
            .map(|k| costs[k].clone()),
    };
    if let Some(opt) = optima {
        for (row, c) in rows.iter_mut().zip(&costs) {
            if c.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for (&x, &o) in c.iter().zip(&opt) {
                sum += optimality_gap(x, o)?;
            }
            row.mean_gap_pct = Some(sum / c.len() as f64);
        }
    }
    Ok((
        BenchmarkReport {
            descriptor: set.descriptor.clone(),
            rows,
        },
        BenchmarkDetail { costs, starts },
    ))
}

pub const REPORT_HEADER: [&str; 12] = [
    "set",
    "n",
    "count",
    "seed",
    "method",
    "mean_cost",
    "mean_gap_pct",
    "median_cost",
    "mean_start_cost",
    "steps",
    "wallclock_s",
    "note",
];

fn opt_sig(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER)?;
        let d = &self.descriptor;
        for r in &self.rows {
            w.write_record([
                d.name.clone(),
                d.n.to_string(),
                d.count.to_string(),
                d.seed.to_string(),
                r.method.clone(),
                opt_sig(r.mean_cost),
                opt_sig(r.mean_gap_pct),
                opt_sig(r.median_cost),
                opt_sig(r.mean_start_cost),
                r.steps.map(|s| s.to_string()).unwrap_or_default(),
                fmt_sig(r.wallclock_s),
                r.note.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers()?.clone();
        if header.iter().ne(REPORT_HEADER.iter().copied()) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let mut descriptor = None;
        let mut rows = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let perr = |msg: String| Error::Parse { line, msg };
            let num = |i: usize| -> Result<Option<f64>> {
                match &rec[i] {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| perr(format!("bad number {s:?}"))),
                }
            };
            let int = |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| perr(format!("bad integer {:?}", &rec[i]))) };
            let d = SetDescriptor {
                name: rec[0].to_string(),
                n: int(1)? as usize,
                count: int(2)? as usize,
                seed: int(3)?,
            };
            match &descriptor {
                None => descriptor = Some(d),
                Some(prev) if *prev != d => return Err(perr("rows describe different instance sets".into())),
                _ => {}
            }
            rows.push(ReportRow {
                method: rec[4].to_string(),
                mean_cost: num(5)?,
                mean_gap_pct: num(6)?,
                median_cost: num(7)?,
                mean_start_cost: num(8)?,
                steps: if rec[9].is_empty() { None } else { Some(int(9)? as usize) },
                wallclock_s: num(10)?.unwrap_or(0.0),
                note: rec[11].to_string(),
            });
        }
        let descriptor = descriptor.ok_or_else(|| Error::Parse {
            line: 2,
            msg: "report has no rows".into(),
        })?;
        Ok(Self { descriptor, rows })
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let d = &self.descriptor;
        let mut out = format!("instances: {} n={} count={} seed={}\n", d.name, d.n, d.count, d.seed);
        let cell = |v: Option<f64>| v.map(fmt_sig).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>10} {:>12} {:>7} {:>10}  note",
            "method", "mean cost", "gap %", "median", "steps", "time (s)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>10} {:>12} {:>7} {:>10}  {}",
                r.method,
                cell(r.mean_cost),
                cell(r.mean_gap_pct),
                cell(r.median_cost),
                r.steps.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                fmt_sig(r.wallclock_s),
                r.note
            );
        }
        out
    }
}
