//! Empirical minimal FIFO depth search: for each stream, the smallest
//! capacity that still lets the concurrent simulation complete while all
//! other streams sit at `max_depth`. Kahn-network monotonicity makes the
//! completion predicate monotone in each capacity, so a binary search is
//! exact.

use std::collections::BTreeMap;

use super::{run_concurrent, ConcurrentOutcome, SimError, TensorStore};
use crate::ir::{ContainerKind, Sdfg, StateId};
use crate::par;
use crate::symbolic::SymBinding;

/// Returns the per-stream minimal capacities that avoid deadlock. Errors if
/// the simulation does not complete even with every stream at `max_depth`.
pub fn min_depths_search(
    sdfg: &Sdfg,
    state: StateId,
    inputs: &TensorStore,
    binding: &SymBinding,
    max_depth: u32,
    step_limit: u64,
) -> Result<BTreeMap<String, u32>, SimError> {
    let streams: Vec<String> = sdfg
        .containers
        .values()
        .filter(|d| d.kind == ContainerKind::Stream)
        .map(|d| d.name.clone())
        .filter(|name| stream_used(sdfg, state, name))
        .collect();

    let all_max: BTreeMap<String, u32> =
        streams.iter().map(|s| (s.clone(), max_depth)).collect();
    let completes = |depths: &BTreeMap<String, u32>| -> Result<bool, SimError> {
        let store = inputs.clone();
        match run_concurrent(sdfg, state, store, binding, Some(depths), step_limit)? {
            ConcurrentOutcome::Completed { .. } => Ok(true),
            ConcurrentOutcome::Deadlock(_) => Ok(false),
        }
    };
    if !completes(&all_max)? {
        return Err(SimError::Graph(format!(
            "simulation does not complete even with every stream at depth {max_depth}"
        )));
    }

    // Each stream's search is independent (others pinned at max_depth), so
    // the searches run in parallel under the `parallel` feature.
    let results = par::map_collect(streams.clone(), |stream| -> Result<(String, u32), SimError> {
        let mut lo = 1u32;
        let mut hi = max_depth;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let mut depths = all_max.clone();
            depths.insert(stream.clone(), mid);
            if completes(&depths)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok((stream, lo))
    });
    results.into_iter().collect()
}

fn stream_used(sdfg: &Sdfg, state: StateId, name: &str) -> bool {
    sdfg.state(state)
        .accessed_containers()
        .contains(name)
}
