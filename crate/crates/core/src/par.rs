//! Replica-level execution: every replica owns its cluster and streams, so
//! replicas can run in any order and results are merged by replica index.

use crate::error::{IdlaError, Result};
use crate::walk::RngStream;

/// How independent replicas are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    /// Rayon's current pool; sequential when built without `parallel`.
    #[default]
    Parallel,
}

/// Replica count, seed and scheduling shared by the Monte Carlo experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub seed: u64,
    pub replicas: u64,
    pub exec: Execution,
    /// Multiplier of the per-walk step budget, see [`crate::walk::StepBudget`].
    pub budget_factor: f64,
}

impl McConfig {
    pub fn new(seed: u64, replicas: u64) -> McConfig {
        McConfig {
            seed,
            replicas,
            exec: Execution::default(),
            budget_factor: crate::walk::StepBudget::DEFAULT_FACTOR,
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> McConfig {
        self.exec = exec;
        self
    }

    pub fn with_budget_factor(mut self, factor: f64) -> McConfig {
        self.budget_factor = factor;
        self
    }

    /// Runs one job per replica, each with its own stream.
    pub fn run<T, F>(&self, tag: u32, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, RngStream) -> Result<T> + Sync + Send,
    {
        let seed = self.seed;
        map_replicas(self.exec, self.replicas, |r| {
            f(r, replica_stream(seed, tag, r)).map_err(|e| match e {
                IdlaError::BudgetExceeded { .. } => IdlaError::InReplica {
                    replica: r,
                    seed,
                    stream_id: replica_stream_id(tag, r),
                    source: Box::new(e),
                },
                e => e,
            })
        })
    }
}

/// Runs `f(0..count)` and returns results in replica order. The first error
/// (by replica index) wins.
pub fn map_replicas<T, F>(exec: Execution, count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..count).map(f).collect(),
        Execution::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let results: Vec<Result<T>> = (0..count).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Stream id of `replica` within experiment `tag`.
pub fn replica_stream_id(tag: u32, replica: u64) -> u64 {
    ((tag as u64) << 40) | (replica & ((1 << 40) - 1))
}

/// The stream owned by `replica` of experiment `tag`.
pub fn replica_stream(seed: u64, tag: u32, replica: u64) -> RngStream {
    RngStream::new(seed, replica_stream_id(tag, replica))
}

/// Experiment tags keeping replica streams disjoint across experiments.
pub mod tags {
    pub const GROW: u32 = 1;
    pub const SHAPE: u32 = 2;
    pub const DIRECTIONAL: u32 = 3;
    pub const MEAN_VISITS: u32 = 4;
    pub const TENTACLE: u32 = 5;
    pub const DEEP_HOLE: u32 = 6;
    pub const NZ_COUNT: u32 = 7;
    pub const POISSON_SPLIT: u32 = 8;
    pub const JOINT_ZERO: u32 = 9;
    pub const HIT_FAR: u32 = 10;
    pub const HIT_EXIT: u32 = 11;
    pub const ORACLE: u32 = 12;
    pub const ABELIAN: u32 = 13;
}
