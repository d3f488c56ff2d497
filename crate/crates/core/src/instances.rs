//! Random uniform instances.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tsp::{Instance, MIN_NODES};

/// `count` instances of `n` nodes with coordinates i.i.d. uniform in the unit
/// square; instance `k` is drawn from stream `k` of `seed`.
pub fn generate_instances(n: usize, count: usize, seed: u64) -> Result<Vec<Instance>> {
    if n < MIN_NODES {
        return Err(Error::InvalidInput(format!("instances need at least {MIN_NODES} nodes, got {n}")));
    }
    (0..count)
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            Instance::new((0..n).map(|_| [r.gen::<f64>(), r.gen::<f64>()]).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let a = generate_instances(20, 5, 11).unwrap();
        let b = generate_instances(20, 5, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.coords(), y.coords());
        }
        assert_ne!(a[0].coords(), a[1].coords());
        let c = generate_instances(20, 5, 12).unwrap();
        assert_ne!(a[0].coords(), c[0].coords());
        assert!(a.iter().flat_map(|i| i.coords()).all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
        assert!(generate_instances(3, 1, 0).is_err());
    }

    #[test]
    fn coordinate_mean_is_one_half() {
        let set = generate_instances(100, 500, 3).unwrap();
        let vals: Vec<f64> = set.iter().flat_map(|i| i.coords()).flat_map(|p| [p[0], p[1]]).collect();
        let n = vals.len() as f64;
        assert!(n >= 1e5);
        let mean = vals.iter().sum::<f64>() / n;
        let se = (1.0f64 / 12.0).sqrt() / n.sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}");
    }
}
