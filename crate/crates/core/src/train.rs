//! Actor-critic training with truncated episodes.
//!
//! Every batch draws fresh instances and random start tours, then runs
//! `total_steps` environment steps as consecutive episodes of the current
//! episode length. One optimizer step follows each episode.

use std::time::Instant;

use crate::env::{compute_returns, reset, step, EnvConfig, SearchState, StepRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, initial_tours, EvalMode};
use crate::instances::generate_instances;
use crate::net::{forward, Ctx, DecodeMode, Forward, NetConfig, PolicyNet};
use crate::oracle::{held_karp, mean_gap, HELD_KARP_DEFAULT_CAP};
use crate::par;
use crate::rng::{self, derive, Rng};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tensor, Var};
use crate::tsp::Instance;

/// Number of decisions per move; log-probabilities and entropies are
/// normalized by it.
pub const DECISIONS_PER_MOVE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    /// `(first epoch, episode length)` pairs, 1-based; the first key must be 1.
    pub schedule: Vec<(usize, usize)>,
    pub gamma: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub beta_v: f64,
    pub beta_h: f64,
    pub beta_h_decay: f64,
    pub weight_decay: f64,
    pub reward_clip: Option<f64>,
    pub net: NetConfig,
    pub seed: u64,
    pub val_instances: usize,
    pub val_steps: usize,
    /// Validate every this many epochs (and after the last one); 0 disables.
    pub val_every: usize,
    /// When false, the wallclock column is written as zero so reruns match byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 10,
            epochs: 30,
            batches_per_epoch: 4,
            batch_size: 64,
            total_steps: 40,
            schedule: vec![(1, 4), (10, 8)],
            gamma: 0.99,
            lr: 1e-3,
            lr_decay: 0.98,
            beta_v: 0.5,
            beta_h: 0.0045,
            beta_h_decay: 0.9,
            weight_decay: 1e-5,
            reward_clip: Some(1.0),
            net: NetConfig::new(32, 2),
            seed: 0,
            val_instances: 256,
            val_steps: 200,
            val_every: 1,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    /// Full-size settings for 20, 50 or 100 nodes. These take days on a CPU.
    pub fn full_scale(n: usize) -> Self {
        let (batch_size, batches, epochs, schedule, beta_h) = match n {
            0..=20 => (512, 10, 200, vec![(1, 8), (100, 10), (150, 20)], 0.0045),
            21..=50 => (512, 10, 300, vec![(1, 8), (100, 10), (200, 20)], 0.0045),
            _ => (256, 20, 300, vec![(1, 4), (100, 8), (200, 10)], 0.0018),
        };
        Self {
            n,
            epochs,
            batches_per_epoch: batches,
            batch_size,
            total_steps: 200,
            schedule,
            beta_h,
            net: NetConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let positive = [
            ("n", self.n),
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("total_steps", self.total_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n < crate::tsp::MIN_NODES {
            return Err(Error::Config(format!("n must be at least {}", crate::tsp::MIN_NODES)));
        }
        if self.schedule.first().map(|s| s.0) != Some(1) {
            return Err(Error::Config("the episode schedule must start at epoch 1".into()));
        }
        if !self.schedule.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::Config("schedule epochs must increase".into()));
        }
        if let Some(&(e, _)) = self.schedule.iter().find(|s| s.1 == 0) {
            return Err(Error::Config(format!("zero episode length at epoch {e}")));
        }
        for (name, v) in [("lr", self.lr), ("lr_decay", self.lr_decay), ("beta_h_decay", self.beta_h_decay)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta_v", self.beta_v), ("beta_h", self.beta_h), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        self.env_config(1).validate()
    }

    /// Episode length in force at `epoch` (1-based).
    pub fn episode_length(&self, epoch: usize) -> usize {
        self.schedule
            .iter()
            .take_while(|s| s.0 <= epoch)
            .last()
            .map_or(self.schedule[0].1, |s| s.1)
    }

    pub fn env_config(&self, epoch: usize) -> EnvConfig {
        EnvConfig {
            total_steps: self.total_steps,
            episode_length: self.episode_length(epoch).min(self.total_steps),
            gamma: self.gamma,
            reward_clip: self.reward_clip,
        }
    }

    /// Optimizer updates per epoch.
    pub fn updates_per_epoch(&self, epoch: usize) -> usize {
        self.batches_per_epoch * self.total_steps.div_ceil(self.env_config(epoch).episode_length)
    }
}

/// Loss terms summed over the steps of one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub policy: f64,
    pub entropy: f64,
    pub value: f64,
    pub mean_advantage: f64,
    pub mean_return: f64,
    /// Mean per-move entropy divided by the number of decisions per move.
    pub mean_entropy: f64,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.policy + self.entropy + self.value
    }

    pub fn is_finite(&self) -> bool {
        [self.policy, self.entropy, self.value, self.mean_advantage, self.mean_return, self.mean_entropy]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One environment's steps within an episode.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub instance: Instance,
    pub records: Vec<StepRecord>,
}

#[derive(Clone, Copy, Debug)]
struct Coefs {
    policy: f64,
    entropy: f64,
    value: f64,
}

impl Coefs {
    fn new(batch: usize, len: usize, beta_h: f64, beta_v: f64) -> Self {
        let (b, t) = (batch as f64, len as f64);
        Self {
            policy: 1.0 / (b * DECISIONS_PER_MOVE * t),
            entropy: beta_h / (b * DECISIONS_PER_MOVE),
            value: beta_v / (b * t),
        }
    }
}

#[derive(Default)]
struct Terms {
    policy: f64,
    entropy: f64,
    value: f64,
    advantage: f64,
    ret: f64,
    raw_entropy: f64,
}

/// Adds one step's loss to the tape and returns its root.
fn step_loss(ctx: &mut Ctx<'_>, fwd: &Forward, ret: f64, coefs: Coefs) -> Result<(Var, Terms)> {
    let v = ctx.g.value(fwd.value).item();
    let adv = ret - v;
    let lp = ctx.g.value(fwd.decoded.log_prob).item();
    let h = ctx.g.value(fwd.decoded.entropy).item();
    let p = ctx.g.scale(fwd.decoded.log_prob, -coefs.policy * adv);
    let e = ctx.g.scale(fwd.decoded.entropy, -coefs.entropy);
    let target = ctx.g.leaf(Tensor::scalar(ret));
    let diff = ctx.g.sub(target, fwd.value)?;
    let sq = ctx.g.square(diff);
    let vl = ctx.g.scale(sq, coefs.value);
    let pe = ctx.g.add(p, e)?;
    let root = ctx.g.add(pe, vl)?;
    Ok((root, Terms {
        policy: -coefs.policy * adv * lp,
        entropy: -coefs.entropy * h,
        value: coefs.value * adv * adv,
        advantage: adv,
        ret,
        raw_entropy: h,
    }))
}

/// Sums the step losses of one tape and backpropagates once into `grads`.
fn episode_loss(ctx: &mut Ctx<'_>, steps: &[(&Forward, f64)], coefs: Coefs, grads: &mut [Tensor]) -> Result<Terms> {
    let mut terms = Terms::default();
    let mut total: Option<Var> = None;
    for &(fwd, ret) in steps {
        let (root, t) = step_loss(ctx, fwd, ret, coefs)?;
        add_terms(&mut terms, &t);
        total = Some(match total {
            Some(acc) => ctx.g.add(acc, root)?,
            None => root,
        });
    }
    if let Some(root) = total {
        ctx.backward_into(root, grads)?;
    }
    Ok(terms)
}

fn add_terms(acc: &mut Terms, t: &Terms) {
    acc.policy += t.policy;
    acc.entropy += t.entropy;
    acc.value += t.value;
    acc.advantage += t.advantage;
    acc.ret += t.ret;
    acc.raw_entropy += t.raw_entropy;
}

fn report_from(t: &Terms, count: usize) -> LossReport {
    let c = count.max(1) as f64;
    LossReport {
        policy: t.policy,
        entropy: t.entropy,
        value: t.value,
        mean_advantage: t.advantage / c,
        mean_return: t.ret / c,
        mean_entropy: t.raw_entropy / c / DECISIONS_PER_MOVE,
    }
}

/// A training environment: instance, search state and its sampling stream.
pub struct EnvSlot {
    pub instance: Instance,
    pub state: SearchState,
    pub rng: Rng,
}

impl EnvSlot {
    pub fn new(instance: Instance, mut rng: Rng) -> Self {
        let state = reset(&instance, &mut rng);
        Self { instance, state, rng }
    }
}

struct EpisodeOut {
    trajectory: Trajectory,
    grads: Option<(Vec<Tensor>, Terms)>,
}

fn run_episode(
    net: &PolicyNet,
    env: &mut EnvSlot,
    len: usize,
    env_cfg: &EnvConfig,
    coefs: Option<Coefs>,
) -> Result<EpisodeOut> {
    let mut ctx = Ctx::new(net);
    let mut steps: Vec<(Forward, SearchState, f64)> = Vec::with_capacity(len);
    for _ in 0..len {
        let fwd = forward(&mut ctx, &env.instance, &env.state, DecodeMode::Sample(&mut env.rng))?;
        let (next, reward) = step(&env.state, fwd.decoded.mv, &env.instance, env_cfg);
        let before = std::mem::replace(&mut env.state, next);
        steps.push((fwd, before, reward));
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.2).collect();
    let returns = compute_returns(&rewards, env_cfg.gamma);
    let grads = match coefs {
        Some(c) => {
            let mut grads = net.params().zeros_like();
            let pairs: Vec<(&Forward, f64)> = steps.iter().map(|s| &s.0).zip(returns.iter().copied()).collect();
            let terms = episode_loss(&mut ctx, &pairs, c, &mut grads)?;
            Some((grads, terms))
        }
        None => None,
    };
    let records = steps
        .into_iter()
        .zip(returns)
        .map(|((fwd, state, reward), ret)| {
            let value = ctx.g.value(fwd.value).item();
            StepRecord {
                state,
                mv: fwd.decoded.mv,
                reward,
                log_prob: ctx.g.value(fwd.decoded.log_prob).item(),
                entropy: ctx.g.value(fwd.decoded.entropy).item(),
                value,
                ret,
                advantage: ret - value,
            }
        })
        .collect();
    Ok(EpisodeOut {
        trajectory: Trajectory {
            instance: env.instance.clone(),
            records,
        },
        grads,
    })
}

/// Samples `len` steps in every environment with frozen parameters and fills
/// in returns and advantages.
pub fn rollout_episode(net: &PolicyNet, envs: &mut [EnvSlot], len: usize, env_cfg: &EnvConfig) -> Result<Vec<Trajectory>> {
    par::map_indexed_mut(envs, |_, env| run_episode(net, env, len, env_cfg, None).map(|o| o.trajectory))
        .into_iter()
        .collect()
}

/// Gradient of the combined loss plus the loss value and its terms.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub report: LossReport,
    pub grads: Vec<Tensor>,
}

fn sum_grads(parts: Vec<Vec<Tensor>>, like: &PolicyNet) -> Vec<Tensor> {
    let mut total = like.params().zeros_like();
    for part in parts {
        for (t, g) in total.iter_mut().zip(&part) {
            t.axpy(1.0, g);
        }
    }
    total
}

/// Recomputes the forward pass on recorded trajectories (moves teacher-forced)
/// and returns the combined actor-critic loss with its gradient. Returns and
/// advantages are taken from the records; the value baseline inside the
/// advantage carries no gradient.
pub fn policy_value_loss(net: &PolicyNet, trajectories: &[Trajectory], beta_h: f64, beta_v: f64) -> Result<LossOutput> {
    let len = trajectories.first().map_or(0, |t| t.records.len());
    if len == 0 || trajectories.iter().any(|t| t.records.len() != len) {
        return Err(Error::InvalidInput("trajectories must be non-empty and of equal length".into()));
    }
    let coefs = Coefs::new(trajectories.len(), len, beta_h, beta_v);
    let parts: Vec<Result<(Vec<Tensor>, Terms)>> = par::map_indexed(trajectories, |_, traj| {
        let mut grads = net.params().zeros_like();
        let mut ctx = Ctx::new(net);
        let mut fwds = Vec::with_capacity(traj.records.len());
        for rec in &traj.records {
            fwds.push(forward(&mut ctx, &traj.instance, &rec.state, DecodeMode::Forced(rec.mv))?);
        }
        let pairs: Vec<(&Forward, f64)> = fwds.iter().zip(traj.records.iter().map(|r| r.ret)).collect();
        let terms = episode_loss(&mut ctx, &pairs, coefs, &mut grads)?;
        Ok((grads, terms))
    });
    let mut terms = Terms::default();
    let mut grad_parts = Vec::with_capacity(parts.len());
    for p in parts {
        let (g, t) = p?;
        add_terms(&mut terms, &t);
        grad_parts.push(g);
    }
    let report = report_from(&terms, trajectories.len() * len);
    if !report.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {report:?}")));
    }
    Ok(LossOutput {
        loss: report.total(),
        report,
        grads: sum_grads(grad_parts, net),
    })
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub batch: usize,
    pub mean_return: f64,
    pub mean_entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub val_gap_pct: Option<f64>,
    pub wallclock_s: f64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "epoch",
    "batch",
    "mean_return",
    "mean_entropy",
    "policy_loss",
    "value_loss",
    "val_gap_pct",
    "wallclock_s",
];

/// Writes the metrics log as CSV with 6 significant digits.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    use crate::report::fmt_sig;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.batch.to_string(),
            fmt_sig(r.mean_return),
            fmt_sig(r.mean_entropy),
            fmt_sig(r.policy_loss),
            fmt_sig(r.value_loss),
            r.val_gap_pct.map(fmt_sig).unwrap_or_default(),
            fmt_sig(r.wallclock_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io("metrics", e))?;
    Ok(())
}

/// Summary handed to the per-epoch callback.
#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub episode_length: usize,
    pub lr: f64,
    pub beta_h: f64,
    pub updates: usize,
    pub val_gap_pct: Option<f64>,
    pub val_mean_cost: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Final parameters, or those at the end of the last completed epoch
    /// (the last checkpoint handed to the callback) when training halted.
    pub net: PolicyNet,
    pub metrics: Vec<MetricsRow>,
    pub epochs: Vec<EpochSummary>,
    pub updates: usize,
    /// Set when a non-finite loss or parameter stopped training.
    pub halted: Option<String>,
}

/// Fixed validation set: instances, start tours and (when small enough) optima.
pub struct Validation {
    pub instances: Vec<Instance>,
    pub starts: Vec<crate::tsp::Tour>,
    pub optima: Option<Vec<f64>>,
    pub steps: usize,
    pub seed: u64,
}

impl Validation {
    pub fn new(n: usize, count: usize, steps: usize, seed: u64) -> Result<Self> {
        let instances = generate_instances(n, count, derive(seed, 2))?;
        let starts = initial_tours(&instances, derive(seed, 3));
        let optima = if n <= HELD_KARP_DEFAULT_CAP {
            let tours: Result<Vec<_>> = par::map_indexed(&instances, |_, i| held_karp(i)).into_iter().collect();
            Some(tours?.iter().map(|t| t.length()).collect())
        } else {
            None
        };
        Ok(Self {
            instances,
            starts,
            optima,
            steps,
            seed: derive(seed, 4),
        })
    }

    /// Mean best cost and, with optima, mean gap of a sampled rollout.
    pub fn run(&self, net: &PolicyNet) -> Result<(f64, Option<f64>)> {
        let r = evaluate_policy(net, &self.instances, &self.starts, self.steps, EvalMode::Sample, self.seed)?;
        let costs: Vec<f64> = r.iter().map(|x| x.best_cost()).collect();
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let gap = match &self.optima {
            Some(o) => Some(mean_gap(&costs, o)?),
            None => None,
        };
        Ok((mean, gap))
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, |_, _| Ok(()))
}

/// Trains from scratch, calling `on_epoch` after every completed epoch.
pub fn train_with<F>(config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochSummary, &PolicyNet) -> Result<()>,
{
    config.validate()?;
    let start = Instant::now();
    let mut net = PolicyNet::init(config.net.clone(), derive(config.seed, 1))?;
    let mut adam = AdamState::new(net.params().tensors());
    let validation = if config.val_every > 0 && config.val_instances > 0 {
        Some(Validation::new(config.n, config.val_instances, config.val_steps, config.seed)?)
    } else {
        None
    };
    let batch_root = derive(config.seed, 5);
    let mut lr = config.lr;
    let mut beta_h = config.beta_h;
    let mut metrics = Vec::new();
    let mut epochs = Vec::new();
    let mut updates = 0;
    let mut last_good = net.params().clone();
    let wallclock = |t: &Instant| if config.record_timing { t.elapsed().as_secs_f64() } else { 0.0 };

    for epoch in 1..=config.epochs {
        let env_cfg = config.env_config(epoch);
        let adam_cfg = AdamConfig {
            lr,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        };
        let epoch_updates_before = updates;
        for batch in 1..=config.batches_per_epoch {
            let bseed = derive(batch_root, ((epoch as u64) << 32) | batch as u64);
            let instances = generate_instances(config.n, config.batch_size, bseed)?;
            let env_seed = derive(bseed, 1);
            let mut envs: Vec<EnvSlot> = instances
                .into_iter()
                .enumerate()
                .map(|(b, inst)| EnvSlot::new(inst, rng::stream(env_seed, b as u64)))
                .collect();
            let mut batch_terms = Vec::new();
            for len in env_cfg.episode_lengths() {
                let coefs = Coefs::new(config.batch_size, len, beta_h, config.beta_v);
                let outs: Vec<Result<EpisodeOut>> =
                    par::map_indexed_mut(&mut envs, |_, env| run_episode(&net, env, len, &env_cfg, Some(coefs)));
                let mut terms = Terms::default();
                let mut parts = Vec::with_capacity(outs.len());
                for o in outs {
                    let (g, t) = o?.grads.expect("gradients requested");
                    add_terms(&mut terms, &t);
                    parts.push(g);
                }
                let report = report_from(&terms, config.batch_size * len);
                let grads = sum_grads(parts, &net);
                adam_step(net.params_mut().tensors_mut(), &grads, &mut adam, &adam_cfg)?;
                if !report.is_finite() || !net.params().is_finite() {
                    *net.params_mut() = last_good;
                    return Ok(halt(net, metrics, epochs, updates, epoch, batch, &report));
                }
                updates += 1;
                batch_terms.push(report);
            }
            let k = batch_terms.len() as f64;
            metrics.push(MetricsRow {
                epoch,
                batch,
                mean_return: batch_terms.iter().map(|r| r.mean_return).sum::<f64>() / k,
                mean_entropy: batch_terms.iter().map(|r| r.mean_entropy).sum::<f64>() / k,
                policy_loss: batch_terms.iter().map(|r| r.policy).sum::<f64>() / k,
                value_loss: batch_terms.iter().map(|r| r.value).sum::<f64>() / k,
                val_gap_pct: None,
                wallclock_s: wallclock(&start),
            });
            log::debug!("epoch {epoch} batch {batch}: {:?}", metrics.last());
        }
        let validate_now = config.val_every > 0 && (epoch % config.val_every == 0 || epoch == config.epochs);
        let (val_mean_cost, val_gap_pct) = match (&validation, validate_now) {
            (Some(v), true) => {
                let (mean, gap) = v.run(&net)?;
                (Some(mean), gap)
            }
            _ => (None, None),
        };
        if let Some(row) = metrics.last_mut() {
            row.val_gap_pct = val_gap_pct;
            row.wallclock_s = wallclock(&start);
        }
        let summary = EpochSummary {
            epoch,
            episode_length: env_cfg.episode_length,
            lr,
            beta_h,
            updates: updates - epoch_updates_before,
            val_gap_pct,
            val_mean_cost,
        };
        log::info!(
            "epoch {epoch}: T={} lr={lr:.3e} beta_h={beta_h:.3e} val cost {:?} gap {:?}",
            env_cfg.episode_length,
            val_mean_cost,
            val_gap_pct
        );
        on_epoch(&summary, &net)?;
        last_good = net.params().clone();
        epochs.push(summary);
        lr *= config.lr_decay;
        beta_h *= config.beta_h_decay;
    }
    Ok(TrainOutcome {
        net,
        metrics,
        epochs,
        updates,
        halted: None,
    })
}

fn halt(
    net: PolicyNet,
    metrics: Vec<MetricsRow>,
    epochs: Vec<EpochSummary>,
    updates: usize,
    epoch: usize,
    batch: usize,
    report: &LossReport,
) -> TrainOutcome {
    let msg = format!("non-finite values at epoch {epoch}, batch {batch}: {report:?}");
    log::error!("{msg}");
    TrainOutcome {
        net,
        metrics,
        epochs,
        updates,
        halted: Some(msg),
    }
}
