//! Instances, tours and the 2-opt move.
//!
//! Tours are stored as position-ordered node indices. A [`Move`] `(i, j)` with
//! `i < j` reverses the tour segment at positions `i..=j`, which removes the
//! edges `(i-1, i)` and `(j, j+1)` (both taken cyclically) and reconnects the
//! tour through `(i-1, j)` and `(i, j+1)`.

use crate::error::{Error, Result};

/// Smallest instance on which a 2-opt move can change the tour.
pub const MIN_NODES: usize = 4;

/// How pairwise distances are derived from coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// TSPLIB `EUC_2D`: Euclidean distance rounded to the nearest integer.
    RoundedEuclidean,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
        match self {
            Metric::Euclidean => d,
            Metric::RoundedEuclidean => (d + 0.5).floor(),
        }
    }
}

/// A symmetric TSP instance with cached distance and normalized-edge matrices.
#[derive(Clone, Debug)]
pub struct Instance {
    coords: Vec<[f64; 2]>,
    features: Vec<[f64; 2]>,
    metric: Metric,
    dist: Vec<f64>,
    norm_edges: Vec<f64>,
}

impl Instance {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::with_metric(coords, Metric::Euclidean)
    }

    pub fn with_metric(coords: Vec<[f64; 2]>, metric: Metric) -> Result<Self> {
        let n = coords.len();
        if n < MIN_NODES {
            return Err(Error::InvalidInput(format!(
                "an instance needs at least {MIN_NODES} nodes, got {n}"
            )));
        }
        if let Some(p) = coords.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite coordinate {p:?}")));
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance(coords[i], coords[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let norm_edges = normalize_edges(&dist, n)?;
        Ok(Self {
            features: coords.clone(),
            coords,
            metric,
            dist,
            norm_edges,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Coordinates fed to the policy network; equal to [`Instance::coords`]
    /// unless replaced with [`Instance::with_features`].
    pub fn features(&self) -> &[[f64; 2]] {
        &self.features
    }

    /// Replaces the policy-facing coordinates, e.g. with a rescaled copy.
    pub fn with_features(mut self, features: Vec<[f64; 2]>) -> Result<Self> {
        if features.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows for {} nodes",
                features.len(),
                self.len()
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.len() + b]
    }

    /// Row-major `n × n` distance matrix.
    pub fn dist_matrix(&self) -> &[f64] {
        &self.dist
    }

    /// Row-major `n × n` symmetrically normalized edge matrix.
    pub fn norm_edges(&self) -> &[f64] {
        &self.norm_edges
    }
}

/// Cost of the closed tour visiting `order` in sequence.
pub fn tour_cost(instance: &Instance, order: &[usize]) -> Result<f64> {
    if order.len() != instance.len() {
        return Err(Error::InvalidInput(format!(
            "tour has {} entries but the instance has {} nodes",
            order.len(),
            instance.len()
        )));
    }
    if let Some(&bad) = order.iter().find(|&&v| v >= instance.len()) {
        return Err(Error::InvalidInput(format!("node index {bad} out of range")));
    }
    Ok(cost_unchecked(instance, order))
}

#[inline]
fn cost_unchecked(instance: &Instance, order: &[usize]) -> f64 {
    let n = order.len();
    let mut total = instance.dist(order[n - 1], order[0]);
    for w in order.windows(2) {
        total += instance.dist(w[0], w[1]);
    }
    total
}

/// A 2-opt move on tour positions, `0 <= i < j <= n - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Move {
    pub i: usize,
    pub j: usize,
}

impl Move {
    pub fn new(i: usize, j: usize, n: usize) -> Result<Self> {
        if i < j && j < n {
            Ok(Self { i, j })
        } else {
            Err(Error::InvalidInput(format!(
                "move ({i}, {j}) violates 0 <= i < j <= {}",
                n.saturating_sub(1)
            )))
        }
    }

    /// Number of distinct moves on an `n`-node tour.
    pub fn count(n: usize) -> usize {
        n * n.saturating_sub(1) / 2
    }

    /// Every move in row-major `(i, j)` order.
    pub fn all(n: usize) -> impl Iterator<Item = Move> {
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| Move { i, j }))
    }
}

/// A permutation of node indices together with its cached length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    order: Vec<usize>,
    length: f64,
}

impl Tour {
    pub fn new(instance: &Instance, order: Vec<usize>) -> Result<Self> {
        let n = instance.len();
        if order.len() != n {
            return Err(Error::InvalidInput(format!(
                "tour has {} entries but the instance has {n} nodes",
                order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &v in &order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidInput(format!(
                    "tour is not a permutation (offending entry {v})"
                )));
            }
        }
        let length = cost_unchecked(instance, &order);
        Ok(Self { order, length })
    }

    /// The tour `0, 1, …, n-1`.
    pub fn identity(instance: &Instance) -> Self {
        let order: Vec<usize> = (0..instance.len()).collect();
        let length = cost_unchecked(instance, &order);
        Self { order, length }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn into_order(self) -> Vec<usize> {
        self.order
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Reverses positions `i..=j` in place.
    pub fn apply_in_place(&mut self, instance: &Instance, mv: Move) {
        debug_assert!(mv.i < mv.j && mv.j < self.order.len());
        self.length += two_opt_delta(instance, self, mv);
        self.order[mv.i..=mv.j].reverse();
    }

    /// Recomputes the cached length from scratch.
    pub fn refresh_length(&mut self, instance: &Instance) {
        self.length = cost_unchecked(instance, &self.order);
    }
}

/// Returns a new tour with positions `i..=j` reversed.
pub fn apply_move(tour: &Tour, mv: Move, instance: &Instance) -> Tour {
    let mut next = tour.clone();
    next.apply_in_place(instance, mv);
    next
}

/// Change in tour length caused by `mv`, computed from the four affected edges.
#[inline]
pub fn two_opt_delta(instance: &Instance, tour: &Tour, mv: Move) -> f64 {
    let order = &tour.order;
    let n = order.len();
    let Move { i, j } = mv;
    if i == 0 && j == n - 1 {
        // Whole-tour reversal: the two "removed" edges coincide.
        return 0.0;
    }
    let prev = order[if i == 0 { n - 1 } else { i - 1 }];
    let next = order[if j == n - 1 { 0 } else { j + 1 }];
    let a = order[i];
    let b = order[j];
    instance.dist(prev, b) + instance.dist(a, next) - instance.dist(prev, a) - instance.dist(b, next)
}

/// Symmetric normalization `e_ij / sqrt(rowsum_i * colsum_j)` of an `n × n` matrix.
pub fn normalize_edges(dist: &[f64], n: usize) -> Result<Vec<f64>> {
    if dist.len() != n * n {
        return Err(Error::InvalidInput(format!(
            "expected {} matrix entries, got {}",
            n * n,
            dist.len()
        )));
    }
    let row: Vec<f64> = (0..n).map(|i| dist[i * n..(i + 1) * n].iter().sum()).collect();
    let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| dist[i * n + j]).sum()).collect();
    if let Some(i) = row.iter().chain(&col).position(|&s| s <= 0.0) {
        return Err(Error::DegenerateInstance(format!(
            "node {} has zero total distance to all other nodes",
            i % n
        )));
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i * n + j] = dist[i * n + j] / (row[i] * col[j]).sqrt();
            }
        }
    }
    Ok(out)
}
