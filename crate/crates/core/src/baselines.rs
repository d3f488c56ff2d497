//! Classical construction heuristics and 2-opt local search.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tsp::{two_opt_delta, Instance, Move, Tour};

/// Moves with a delta above `-IMPROVEMENT_EPS` are not treated as improving.
pub const IMPROVEMENT_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PivotRule {
    FirstImprovement,
    BestImprovement,
}

#[derive(Clone, Debug)]
pub struct LocalSearchConfig {
    pub rule: PivotRule,
    pub restarts: bool,
    pub max_steps: usize,
    pub rng_seed: u64,
}

impl LocalSearchConfig {
    pub fn new(rule: PivotRule, restarts: bool, max_steps: usize, rng_seed: u64) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        Ok(Self {
            rule,
            restarts,
            max_steps,
            rng_seed,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LocalSearchOutcome {
    pub best: Tour,
    /// Accepted moves plus restarts.
    pub steps_used: usize,
    /// Current tour length, starting with the initial tour and then one entry per step.
    pub trace: Vec<f64>,
    /// Step numbers (1-based, indexing `trace`) at which a restart happened.
    pub restart_steps: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Selection {
    Nearest,
    Farthest,
}

/// Nearest insertion, seeded with the closest pair of nodes.
pub fn nearest_insertion(instance: &Instance) -> Tour {
    select_and_insert(instance, Selection::Nearest)
}

/// Farthest insertion, seeded with the most distant pair of nodes.
pub fn farthest_insertion(instance: &Instance) -> Tour {
    select_and_insert(instance, Selection::Farthest)
}

/// Random insertion: nodes are taken in uniformly random order, each placed at
/// its cheapest position.
pub fn random_insertion(instance: &Instance, seed: u64) -> Tour {
    let n = instance.len();
    let mut rng = rng::stream(seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut tour = Vec::with_capacity(n);
    tour.push(order[0]);
    for &u in &order[1..] {
        insert_cheapest(instance, &mut tour, u);
    }
    finish(instance, tour)
}

fn select_and_insert(instance: &Instance, how: Selection) -> Tour {
    let n = instance.len();
    let (mut a, mut b) = (0, 1);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = instance.dist(i, j);
            let cur = instance.dist(a, b);
            let better = match how {
                Selection::Nearest => d < cur,
                Selection::Farthest => d > cur,
            };
            if better {
                (a, b) = (i, j);
            }
        }
    }
    let mut in_tour = vec![false; n];
    in_tour[a] = true;
    in_tour[b] = true;
    let mut tour = vec![a, b];
    // distance from each node to the partial tour
    let mut to_tour: Vec<f64> = (0..n).map(|u| instance.dist(u, a).min(instance.dist(u, b))).collect();
    while tour.len() < n {
        let mut pick = usize::MAX;
        for u in (0..n).filter(|&u| !in_tour[u]) {
            if pick == usize::MAX {
                pick = u;
                continue;
            }
            let better = match how {
                Selection::Nearest => to_tour[u] < to_tour[pick],
                Selection::Farthest => to_tour[u] > to_tour[pick],
            };
            if better {
                pick = u;
            }
        }
        insert_cheapest(instance, &mut tour, pick);
        in_tour[pick] = true;
        for (u, d) in to_tour.iter_mut().enumerate() {
            *d = d.min(instance.dist(u, pick));
        }
    }
    finish(instance, tour)
}

/// Inserts `u` between the consecutive pair (first one on ties) where it adds the least length.
fn insert_cheapest(instance: &Instance, tour: &mut Vec<usize>, u: usize) {
    let k = tour.len();
    if k == 1 {
        tour.push(u);
        return;
    }
    let mut best_pos = 0;
    let mut best_cost = f64::INFINITY;
    for p in 0..k {
        let x = tour[p];
        let y = tour[(p + 1) % k];
        let c = instance.dist(x, u) + instance.dist(u, y) - instance.dist(x, y);
        if c < best_cost {
            best_cost = c;
            best_pos = p;
        }
    }
    tour.insert(best_pos + 1, u);
}

fn finish(instance: &Instance, order: Vec<usize>) -> Tour {
    Tour::new(instance, order).expect("insertion produces a permutation")
}

/// First or best improvement 2-opt, optionally restarting from a random tour
/// at each local optimum.
pub fn local_search_2opt(instance: &Instance, start: &Tour, config: &LocalSearchConfig) -> LocalSearchOutcome {
    let n = instance.len();
    let moves: Vec<Move> = Move::all(n).collect();
    let mut rng = rng::stream(config.rng_seed, 1);
    let mut current = start.clone();
    let mut best = start.clone();
    let mut trace = vec![current.length()];
    let mut restart_steps = Vec::new();
    let mut cursor = 0usize;
    let mut steps = 0usize;

    while steps < config.max_steps {
        let found = match config.rule {
            PivotRule::BestImprovement => best_improving(instance, &current, &moves),
            PivotRule::FirstImprovement => {
                let hit = first_improving(instance, &current, &moves, cursor);
                if let Some(k) = hit {
                    cursor = (k + 1) % moves.len();
                }
                hit
            }
        };
        match found {
            Some(k) => current.apply_in_place(instance, moves[k]),
            None if config.restarts => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                current = Tour::new(instance, order).expect("shuffled permutation");
                cursor = 0;
                restart_steps.push(steps + 1);
            }
            None => break,
        }
        steps += 1;
        trace.push(current.length());
        if current.length() < best.length() {
            best = current.clone();
        }
    }
    LocalSearchOutcome {
        best,
        steps_used: steps,
        trace,
        restart_steps,
    }
}

fn best_improving(instance: &Instance, tour: &Tour, moves: &[Move]) -> Option<usize> {
    let mut best = -IMPROVEMENT_EPS;
    let mut arg = None;
    for (k, &mv) in moves.iter().enumerate() {
        let d = two_opt_delta(instance, tour, mv);
        if d < best {
            best = d;
            arg = Some(k);
        }
    }
    arg
}

fn first_improving(instance: &Instance, tour: &Tour, moves: &[Move], from: usize) -> Option<usize> {
    let m = moves.len();
    (0..m)
        .map(|off| (from + off) % m)
        .find(|&k| two_opt_delta(instance, tour, moves[k]) < -IMPROVEMENT_EPS)
}

/// Uniformly random tour.
pub fn random_tour<R: Rng + ?Sized>(instance: &Instance, rng: &mut R) -> Tour {
    let mut order: Vec<usize> = (0..instance.len()).collect();
    order.shuffle(rng);
    Tour::new(instance, order).expect("shuffled permutation")
}

/// True when no 2-opt move improves `tour` by more than `tol`.
pub fn is_two_opt_optimal(instance: &Instance, tour: &Tour, tol: f64) -> bool {
    Move::all(instance.len()).all(|mv| two_opt_delta(instance, tour, mv) >= -tol)
}
