//! Learned 2-opt improvement for the Euclidean travelling salesman problem.
//!
//! The crate bundles the problem primitives, exact and heuristic baselines, a
//! small reverse-mode autodiff engine, the policy/value network, the local
//! search environment, an actor-critic trainer and the file formats used by
//! the `l2opt` command line tool.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod instances;
pub mod net;
pub mod oracle;
pub mod par;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod tsp;
pub mod tsplib;

pub use error::{Error, Result};
pub use tsp::{apply_move, tour_cost, two_opt_delta, Instance, Metric, Move, Tour};
