//! Data-parallel execution of independent simulated episodes.
//!
//! Runs are sequential state machines, but property sweeps, determinism checks and
//! exhaustive command searches run many independent episodes. With the `parallel`
//! feature (on by default) those fan out over rayon; without it, or with
//! [`Strategy::Sequential`], they run in order on the calling thread.

use std::sync::Arc;

use crate::sim::{Privilege, Scenario, SimBackend};
use crate::tools::ToolKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    Sequential,
    #[default]
    Parallel,
}

/// Maps `f` over `0..count`, preserving order. `Parallel` degrades to sequential
/// when the crate is built without the `parallel` feature.
pub fn map_indices<T, F>(strategy: Strategy, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match strategy {
        Strategy::Sequential => (0..count).map(f).collect(),
        Strategy::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Result of exhaustively replaying command sequences against fresh targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchReport {
    pub alphabet: Vec<String>,
    pub max_len: usize,
    pub sequences: u64,
    /// Shortest sequences (as alphabet indices) that reached root, if any.
    pub shortest_root: Option<Vec<usize>>,
    /// How many sequences reached root.
    pub root_count: u64,
}

fn decode(mut index: u64, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (index % base as u64) as usize;
        index /= base as u64;
    }
    out
}

/// Tries every sequence of `len` commands drawn from `alphabet` and reports which
/// of them leave the target at root.
pub fn search_sequences(scenario: &Arc<Scenario>, alphabet: &[String], len: usize, strategy: Strategy) -> SearchReport {
    let base = alphabet.len();
    let total = (base as u64).checked_pow(len as u32).expect("search space fits in u64");
    let reached: Vec<bool> = map_indices(strategy, total as usize, |i| {
        let seq = decode(i as u64, base, len);
        let mut backend = SimBackend::new(scenario.clone(), usize::MAX / 4);
        for &c in &seq {
            backend.run_payload(ToolKind::Shell, &alphabet[c]);
        }
        backend.target.privilege() == Privilege::Root
    });
    let first = reached.iter().position(|&r| r);
    SearchReport {
        alphabet: alphabet.to_vec(),
        max_len: len,
        sequences: total,
        shortest_root: first.map(|i| decode(i as u64, base, len)),
        root_count: reached.iter().filter(|&&r| r).count() as u64,
    }
}
