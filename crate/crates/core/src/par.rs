//! Data-parallel helpers.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run sequentially. Results are always returned in input order, so the
//! two builds produce identical output for deterministic closures.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..len`, preserving order.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..len).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..len).map(f).collect();
}

/// Maps `f` over `items` with their index, preserving order.
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
}

/// Mutable counterpart of [`map_indexed`].
pub fn map_indexed_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Vec<u64> = (0..1000).collect();
        let out = map_indexed(&v, |i, x| (i as u64) * 1000 + x);
        assert!(out.iter().enumerate().all(|(i, &y)| y == i as u64 * 1001));
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
