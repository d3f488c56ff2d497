//! Exact solvers used to compute optimality gaps at small sizes.

use crate::error::{Error, Result};
use crate::tsp::{Instance, Tour};

pub const BRUTE_FORCE_CAP: usize = 10;
pub const HELD_KARP_DEFAULT_CAP: usize = 20;

/// Tolerance below the optimum that is still accepted as rounding noise.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Exhaustive enumeration of all tours with node 0 fixed first.
pub fn brute_force(instance: &Instance) -> Result<Tour> {
    let n = instance.len();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            solver: "brute force",
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, order.clone());
    permute(instance, &mut order, 1, 0.0, &mut best);
    Tour::new(instance, best.1)
}

fn permute(inst: &Instance, order: &mut [usize], k: usize, partial: f64, best: &mut (f64, Vec<usize>)) {
    let n = order.len();
    if k == n {
        let total = partial + inst.dist(order[n - 1], order[0]);
        if total < best.0 {
            best.0 = total;
            best.1.copy_from_slice(order);
        }
        return;
    }
    for s in k..n {
        order.swap(k, s);
        let step = inst.dist(order[k - 1], order[k]);
        permute(inst, order, k + 1, partial + step, best);
        order.swap(k, s);
    }
}

/// Held-Karp subset dynamic program with the default size cap.
pub fn held_karp(instance: &Instance) -> Result<Tour> {
    held_karp_capped(instance, HELD_KARP_DEFAULT_CAP)
}

/// Held-Karp with an explicit cap on `n`; memory grows as `2^(n-1) · (n-1)`.
pub fn held_karp_capped(instance: &Instance, cap: usize) -> Result<Tour> {
    let n = instance.len();
    if n > cap || n > 25 {
        return Err(Error::TooLarge {
            solver: "Held-Karp",
            n,
            cap: cap.min(25),
        });
    }
    // Node 0 is the fixed start; the DP runs over the remaining m nodes,
    // local index k standing for node k + 1.
    let m = n - 1;
    let full = (1usize << m) - 1;
    let d = |a: usize, b: usize| instance.dist(a + 1, b + 1);
    let mut cost = vec![f64::INFINITY; (full + 1) * m];
    let mut pred = vec![u8::MAX; (full + 1) * m];
    for k in 0..m {
        cost[(1 << k) * m + k] = instance.dist(0, k + 1);
    }
    let local: Vec<f64> = (0..m * m).map(|x| d(x / m, x % m)).collect();
    for mask in 1..=full {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut bits = mask;
        while bits != 0 {
            let last = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let prev_mask = mask ^ (1 << last);
            let row = &cost[prev_mask * m..prev_mask * m + m];
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            let mut pbits = prev_mask;
            while pbits != 0 {
                let p = pbits.trailing_zeros() as usize;
                pbits &= pbits - 1;
                let c = row[p] + local[p * m + last];
                if c < best {
                    best = c;
                    arg = p as u8;
                }
            }
            cost[mask * m + last] = best;
            pred[mask * m + last] = arg;
        }
    }
    let mut best = f64::INFINITY;
    let mut last = 0;
    for k in 0..m {
        let c = cost[full * m + k] + instance.dist(k + 1, 0);
        if c < best {
            best = c;
            last = k;
        }
    }
    let mut rev = Vec::with_capacity(n);
    let mut mask = full;
    loop {
        rev.push(last + 1);
        let p = pred[mask * m + last];
        mask ^= 1 << last;
        if p == u8::MAX {
            break;
        }
        last = p as usize;
    }
    rev.push(0);
    rev.reverse();
    let tour = Tour::new(instance, rev)?;
    debug_assert!((tour.length() - best).abs() < 1e-9);
    Ok(tour)
}

/// Percentage by which `cost` exceeds `optimal`.
pub fn optimality_gap(cost: f64, optimal: f64) -> Result<f64> {
    if !(optimal > 0.0) || !cost.is_finite() {
        return Err(Error::InvalidInput(format!(
            "gap needs a positive optimum and finite cost (cost {cost}, optimum {optimal})"
        )));
    }
    if cost < optimal - GAP_TOLERANCE {
        return Err(Error::OracleInconsistency { cost, optimal });
    }
    Ok(((cost / optimal - 1.0) * 100.0).max(0.0))
}

/// Mean of per-instance gaps.
pub fn mean_gap(costs: &[f64], optima: &[f64]) -> Result<f64> {
    if costs.len() != optima.len() || costs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "mean gap over {} costs and {} optima",
            costs.len(),
            optima.len()
        )));
    }
    let mut sum = 0.0;
    for (&c, &o) in costs.iter().zip(optima) {
        sum += optimality_gap(c, o)?;
    }
    Ok(sum / costs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Instance {
        Instance::new((0..n).map(|_| [rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn unit_square() {
        let inst = Instance::new(vec![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((brute_force(&inst).unwrap().length() - 4.0).abs() < 1e-12);
        assert!((held_karp(&inst).unwrap().length() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rhombus_avoids_short_diagonal() {
        // Diamond with a short vertical diagonal (0-2) and a long horizontal one (1-3).
        let inst = Instance::new(vec![[0.5, 0.3], [0.9, 0.5], [0.5, 0.7], [0.1, 0.5]]).unwrap();
        let t = brute_force(&inst).unwrap();
        let o = t.order();
        let pos = |v: usize| o.iter().position(|&x| x == v).unwrap();
        let adjacent = |a: usize, b: usize| {
            let d = (pos(a) as isize - pos(b) as isize).rem_euclid(4);
            d == 1 || d == 3
        };
        assert!(!adjacent(0, 2));
        assert!(!adjacent(1, 3));
    }

    #[test]
    fn held_karp_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = 10;
            let inst = random_instance(&mut rng, n);
            let a = brute_force(&inst).unwrap().length();
            let b = held_karp(&inst).unwrap().length();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn relabeling_preserves_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 11);
        let mut coords = inst.coords().to_vec();
        coords.reverse();
        coords.swap(2, 7);
        let relabeled = Instance::new(coords).unwrap();
        let a = held_karp(&inst).unwrap().length();
        let b = held_karp(&relabeled).unwrap().length();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn size_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 11);
        assert!(matches!(brute_force(&inst), Err(Error::TooLarge { .. })));
        assert!(matches!(held_karp_capped(&inst, 10), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn gaps() {
        assert_eq!(optimality_gap(3.84, 3.84).unwrap(), 0.0);
        let g = optimality_gap(4.33, 3.84).unwrap();
        assert!((g - 12.760416666).abs() < 1e-6);
        assert!(matches!(
            optimality_gap(3.84 - 1e-6, 3.84),
            Err(Error::OracleInconsistency { .. })
        ));
        assert!(optimality_gap(1.0, 0.0).is_err());
        assert!((mean_gap(&[2.0, 3.0], &[2.0, 2.0]).unwrap() - 25.0).abs() < 1e-12);
    }
}
