//! Policy rollouts with best-so-far tracking.

use rand::Rng as _;

use crate::baselines::random_tour;
use crate::env::SearchState;
use crate::error::{Error, Result};
use crate::net::{encode_state, policy_decode, Ctx, DecodeMode, PolicyNet};
use crate::par;
use crate::rng;
use crate::tsp::{apply_move, Instance, Move, Tour};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Sample,
    Greedy,
}

/// Result of one rollout on one instance.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub best: Tour,
    /// Step (1-based) at which `best` was first reached; 0 for the start tour.
    pub best_step: usize,
    /// Best-so-far length after each step, starting with the initial tour.
    pub trace: Vec<f64>,
}

impl Rollout {
    pub fn best_cost(&self) -> f64 {
        self.best.length()
    }
}

/// Uniformly random start tours, one per instance, deterministic per seed.
pub fn initial_tours(instances: &[Instance], seed: u64) -> Vec<Tour> {
    par::map_indexed(instances, |k, inst| random_tour(inst, &mut rng::stream(seed, k as u64)))
}

fn check_steps(steps: usize, instances: &[Instance], starts: &[Tour]) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one step".into()));
    }
    if instances.len() != starts.len() {
        return Err(Error::InvalidInput(format!(
            "{} instances but {} start tours",
            instances.len(),
            starts.len()
        )));
    }
    Ok(())
}

fn roll<F>(instance: &Instance, start: &Tour, steps: usize, mut choose: F) -> Result<Rollout>
where
    F: FnMut(&SearchState) -> Result<Move>,
{
    let mut state = SearchState::new(start.clone());
    let mut best_step = 0;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(state.best.length());
    for t in 1..=steps {
        let mv = choose(&state)?;
        let current = apply_move(&state.current, mv, instance);
        if current.length() < state.best.length() {
            state.best = current.clone();
            best_step = t;
        }
        state.current = current;
        trace.push(state.best.length());
    }
    Ok(Rollout {
        best: state.best,
        best_step,
        trace,
    })
}

/// Rolls the policy for `steps` moves from each start tour. Instance `k`
/// samples from stream `k` of `seed`.
pub fn evaluate_policy(
    net: &PolicyNet,
    instances: &[Instance],
    starts: &[Tour],
    steps: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<Vec<Rollout>> {
    check_steps(steps, instances, starts)?;
    par::map_range(instances.len(), |k| {
        let mut r = rng::stream(seed, k as u64);
        roll(&instances[k], &starts[k], steps, |state| {
            let mut ctx = Ctx::new(net);
            let enc = encode_state(&mut ctx, &instances[k], state)?;
            let mode = match mode {
                EvalMode::Sample => DecodeMode::Sample(&mut r),
                EvalMode::Greedy => DecodeMode::Greedy,
            };
            Ok(policy_decode(&mut ctx, &enc, mode)?.mv)
        })
    })
    .into_iter()
    .collect()
}

/// Uniformly random 2-opt moves under the same protocol as [`evaluate_policy`].
pub fn evaluate_random_policy(instances: &[Instance], starts: &[Tour], steps: usize, seed: u64) -> Result<Vec<Rollout>> {
    check_steps(steps, instances, starts)?;
    par::map_range(instances.len(), |k| {
        let mut r = rng::stream(seed, k as u64);
        let n = instances[k].len();
        let total = Move::count(n);
        roll(&instances[k], &starts[k], steps, |_| Ok(move_from_index(r.gen_range(0..total), n)))
    })
    .into_iter()
    .collect()
}

/// The `idx`-th move in row-major `(i, j)` order.
pub fn move_from_index(mut idx: usize, n: usize) -> Move {
    for i in 0..n - 1 {
        let row = n - 1 - i;
        if idx < row {
            return Move { i, j: i + 1 + idx };
        }
        idx -= row;
    }
    panic!("move index out of range for n = {n}");
}
