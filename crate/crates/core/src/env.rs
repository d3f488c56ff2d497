//! The 2-opt search environment: states, transitions, rewards and returns.

use crate::baselines::random_tour;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tsp::{apply_move, Instance, Move, Tour};

/// The current tour and the best tour seen so far in this run.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub current: Tour,
    pub best: Tour,
}

impl SearchState {
    pub fn new(current: Tour) -> Self {
        Self {
            best: current.clone(),
            current,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Steps per run.
    pub total_steps: usize,
    /// Steps per episode; the last episode of a run may be shorter.
    pub episode_length: usize,
    pub gamma: f64,
    pub reward_clip: Option<f64>,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.episode_length == 0 || self.episode_length > self.total_steps {
            return Err(Error::Config(format!(
                "need 0 < episode_length ({}) <= total_steps ({})",
                self.episode_length, self.total_steps
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if let Some(c) = self.reward_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("reward clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Lengths of the consecutive episodes making up one run.
    pub fn episode_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut left = self.total_steps;
        while left > 0 {
            let t = left.min(self.episode_length);
            out.push(t);
            left -= t;
        }
        out
    }
}

/// One transition as seen by the learner.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub state: SearchState,
    pub mv: Move,
    pub reward: f64,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
    pub ret: f64,
    pub advantage: f64,
}

/// Starts a run from a uniformly random tour.
pub fn reset(instance: &Instance, rng: &mut Rng) -> SearchState {
    SearchState::new(random_tour(instance, rng))
}

/// Applies `mv` and returns the next state and the (possibly clipped) reward.
pub fn step(state: &SearchState, mv: Move, instance: &Instance, config: &EnvConfig) -> (SearchState, f64) {
    let current = apply_move(&state.current, mv, instance);
    let best = if current.length() < state.best.length() {
        current.clone()
    } else {
        state.best.clone()
    };
    let raw = state.best.length() - best.length();
    let reward = match config.reward_clip {
        Some(c) => raw.min(c),
        None => raw,
    };
    (SearchState { current, best }, reward)
}

/// Discounted returns within one episode, without bootstrapping.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn cfg(clip: Option<f64>) -> EnvConfig {
        EnvConfig {
            total_steps: 10,
            episode_length: 4,
            gamma: 0.99,
            reward_clip: clip,
        }
    }

    fn crossing_square() -> (Instance, SearchState) {
        let inst = Instance::new(vec![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let t = Tour::new(&inst, vec![0, 1, 2, 3]).unwrap();
        (inst, SearchState::new(t))
    }

    #[test]
    fn config_checks() {
        assert!(cfg(None).validate().is_ok());
        assert!(EnvConfig { episode_length: 11, ..cfg(None) }.validate().is_err());
        assert!(EnvConfig { gamma: 0.0, ..cfg(None) }.validate().is_err());
        assert!(cfg(Some(0.0)).validate().is_err());
        assert_eq!(cfg(None).episode_lengths(), vec![4, 4, 2]);
    }

    #[test]
    fn reset_is_seeded() {
        let (inst, _) = crossing_square();
        let a = reset(&inst, &mut rng::stream(3, 0));
        let b = reset(&inst, &mut rng::stream(3, 0));
        assert_eq!(a, b);
        assert_eq!(a.best.length(), a.current.length());
    }

    #[test]
    fn reset_is_uniform_over_permutations() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let inst = Instance::new((0..5).map(|_| [r.gen(), r.gen()]).collect()).unwrap();
        let mut rng = rng::stream(5, 0);
        let trials = 10_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..trials {
            *counts.entry(reset(&inst, &mut rng).current.into_order()).or_default() += 1;
        }
        assert_eq!(counts.len(), 120);
        let p = 1.0 / 120.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in counts.values() {
            assert!((c as f64 - trials as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn crossing_square_reward() {
        let (inst, st) = crossing_square();
        let (next, r) = step(&st, Move { i: 1, j: 2 }, &inst, &cfg(Some(1.0)));
        let expected = 2.0 + 2.0 * 2f64.sqrt() - 4.0;
        assert!((r - expected).abs() < 1e-12);
        assert!((next.best.length() - 4.0).abs() < 1e-12);
        // Input untouched.
        assert_eq!(st.current.order(), &[0, 1, 2, 3]);
    }

    #[test]
    fn non_improving_move_gives_zero() {
        let (inst, st) = crossing_square();
        let (good, _) = step(&st, Move { i: 1, j: 2 }, &inst, &cfg(None));
        let (worse, r) = step(&good, Move { i: 1, j: 2 }, &inst, &cfg(None));
        assert_eq!(r, 0.0);
        assert_eq!(worse.best, good.best);
        assert!(worse.current.length() > worse.best.length());
    }

    #[test]
    fn clip_caps_large_improvements() {
        let s = 1.7 / (2.0 + 2.0 * 2f64.sqrt() - 4.0);
        let inst = Instance::new(vec![[0.0, 0.0], [s, s], [0.0, s], [s, 0.0]]).unwrap();
        let st = SearchState::new(Tour::new(&inst, vec![0, 1, 2, 3]).unwrap());
        let (_, raw) = step(&st, Move { i: 1, j: 2 }, &inst, &cfg(None));
        assert!((raw - 1.7).abs() < 1e-9);
        let (_, clipped) = step(&st, Move { i: 1, j: 2 }, &inst, &cfg(Some(1.0)));
        assert_eq!(clipped, 1.0);
    }

    #[test]
    fn returns() {
        assert_eq!(compute_returns(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
        assert_eq!(compute_returns(&[1.0, 0.0, 4.0], 0.5), vec![2.0, 2.0, 4.0]);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let rewards: Vec<f64> = (0..30).map(|_| r.gen()).collect();
        let fast = compute_returns(&rewards, 0.99);
        for t in 0..30 {
            let direct: f64 = (t..30).map(|k| 0.99f64.powi((k - t) as i32) * rewards[k]).sum();
            assert!((fast[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn telescoping_and_monotone_best() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let inst = Instance::new((0..12).map(|_| [r.gen(), r.gen()]).collect()).unwrap();
        let mut rng = rng::stream(2, 0);
        let start = reset(&inst, &mut rng);
        let mut st = start.clone();
        let (mut sum, mut sum_clip) = (0.0, 0.0);
        for _ in 0..500 {
            let i = r.gen_range(0..11);
            let j = r.gen_range(i + 1..12);
            let mv = Move { i, j };
            let (next, rew) = step(&st, mv, &inst, &cfg(None));
            let (_, rc) = step(&st, mv, &inst, &cfg(Some(0.05)));
            assert!(next.best.length() <= st.best.length());
            assert!((0.0..=0.05).contains(&rc));
            sum += rew;
            sum_clip += rc;
            st = next;
        }
        let total = start.best.length() - st.best.length();
        assert!((sum - total).abs() < 1e-9);
        assert!(sum_clip <= total + 1e-12);
    }
}
