//! Memlet path utilities: scope chains of edges, map trip counts, volume
//! derivation, and tracing of read/write lineages through map scopes.
//!
//! Edges crossing a map boundary pair up through passthrough connectors named
//! `in_<key>` / `out_<key>`: the outer edge ends at the entry (or leaves the
//! exit) and the inner edges continue from the matching connector.

use super::{EdgeId, Memlet, NodeId, NodeKind, State};
use crate::symbolic::SymExpr;

/// The passthrough key of a connector name, if it is one.
pub fn passthrough_key(conn: Option<&str>) -> Option<&str> {
    let conn = conn?;
    conn.strip_prefix("in_").or_else(|| conn.strip_prefix("out_"))
}

pub fn in_conn(key: &str) -> String {
    format!("in_{key}")
}

pub fn out_conn(key: &str) -> String {
    format!("out_{key}")
}

/// Map entries whose iteration the edge executes under, outermost first.
pub fn edge_scope_chain(state: &State, edge: EdgeId) -> Vec<NodeId> {
    let e = state.edge(edge);
    if matches!(state.node(e.src).kind, NodeKind::MapEntry { .. }) {
        let mut chain = state.scope_chain(e.src);
        chain.push(e.src);
        return chain;
    }
    if let NodeKind::MapExit { entry } = state.node(e.dst).kind {
        let mut chain = state.scope_chain(entry);
        chain.push(entry);
        return chain;
    }
    state.scope_chain(e.dst)
}

/// Product of the trip counts of the maps in `chain`.
pub fn trip_count(state: &State, chain: &[NodeId]) -> SymExpr {
    let mut total = SymExpr::one();
    for id in chain {
        if let NodeKind::MapEntry { ranges, .. } = &state.node(*id).kind {
            for range in ranges {
                total = total.mul(&range.count());
            }
        }
    }
    total
}

/// True when the edge sits on the outer side of a map passthrough, i.e. its
/// volume is the sum of the matching inner edges.
fn is_outer_side(state: &State, edge: EdgeId) -> bool {
    let e = state.edge(edge);
    (matches!(state.node(e.dst).kind, NodeKind::MapEntry { .. })
        && passthrough_key(e.dst_conn.as_deref()).is_some())
        || (matches!(state.node(e.src).kind, NodeKind::MapExit { .. })
            && passthrough_key(e.src_conn.as_deref()).is_some())
}

/// Inner edges paired with an outer-side edge through a map passthrough.
fn inner_edges(state: &State, edge: EdgeId) -> Vec<EdgeId> {
    let e = state.edge(edge);
    if matches!(state.node(e.dst).kind, NodeKind::MapEntry { .. }) {
        if let Some(key) = passthrough_key(e.dst_conn.as_deref()) {
            let want = out_conn(key);
            return state
                .out_edges(e.dst)
                .into_iter()
                .filter(|id| state.edge(*id).src_conn.as_deref() == Some(want.as_str()))
                .collect();
        }
    }
    if matches!(state.node(e.src).kind, NodeKind::MapExit { .. }) {
        if let Some(key) = passthrough_key(e.src_conn.as_deref()) {
            let want = in_conn(key);
            return state
                .in_edges(e.src)
                .into_iter()
                .filter(|id| state.edge(*id).dst_conn.as_deref() == Some(want.as_str()))
                .collect();
        }
    }
    Vec::new()
}

/// Expected volume of an edge.
///
/// Array and scalar memlets follow the leaf rule: subset extent times the
/// trip counts of the maps enclosing the edge (fan-out inside a scope does
/// not inflate the outer edge). Stream memlets on the outer side of a map
/// passthrough instead sum the paired inner edges, since every push/pop is a
/// distinct element through the FIFO. Returns `None` when the edge (or, for
/// streams, a contributing inner edge) is dynamic.
pub fn derived_volume(sdfg: &super::Sdfg, state: &State, edge: EdgeId) -> Option<SymExpr> {
    if state.edge(edge).memlet.dynamic {
        return None;
    }
    let is_stream = sdfg
        .container(&state.edge(edge).memlet.data)
        .map(|d| d.is_stream())
        .unwrap_or(false);
    if is_stream && is_outer_side(state, edge) {
        let mut total = SymExpr::zero();
        for inner in inner_edges(state, edge) {
            total = total.add(&derived_volume(sdfg, state, inner)?);
        }
        return Some(total);
    }
    let chain = edge_scope_chain(state, edge);
    Some(state.edge(edge).memlet.extent().mul(&trip_count(state, &chain)))
}

/// Rewrites every non-dynamic memlet volume to its derived value, and marks
/// stream outer-side edges dynamic when any paired inner edge is dynamic.
pub fn autovolume(sdfg: &mut super::Sdfg, state_id: super::StateId) {
    let state = sdfg.state(state_id);
    let ids: Vec<EdgeId> = state.edges().map(|(id, _)| id).collect();
    let mut updates: Vec<(EdgeId, Option<SymExpr>)> = Vec::new();
    for id in ids {
        updates.push((id, derived_volume(sdfg, state, id)));
    }
    let state = sdfg.state_mut(state_id);
    for (id, volume) in updates {
        match volume {
            Some(volume) => state.edge_mut(id).memlet.volume = volume,
            None => state.edge_mut(id).memlet.dynamic = true,
        }
    }
}

/// Applies [`autovolume`] to every state.
pub fn autovolume_all(sdfg: &mut super::Sdfg) {
    for id in sdfg.state_ids().collect::<Vec<_>>() {
        autovolume(sdfg, id);
    }
}

/// A traced lineage from an access node to a leaf consumer or producer.
#[derive(Debug, Clone)]
pub struct MemletPath {
    /// Edges from the access node towards the leaf (reads) or from the leaf
    /// towards the access node (writes); in traversal order from the access.
    pub edges: Vec<EdgeId>,
    /// The consuming/producing node.
    pub leaf: NodeId,
    pub leaf_conn: Option<String>,
    /// Map entries traversed, outermost first.
    pub maps: Vec<NodeId>,
    /// The memlet adjacent to the leaf (the precise per-iteration access).
    pub innermost: Memlet,
}

/// All read lineages starting at the out-edges of an access node.
pub fn trace_reads(state: &State, access: NodeId) -> Vec<MemletPath> {
    let mut out = Vec::new();
    for edge in sorted(state.out_edges(access)) {
        walk_down(state, edge, Vec::new(), Vec::new(), &mut out);
    }
    out
}

fn walk_down(
    state: &State,
    edge: EdgeId,
    mut path: Vec<EdgeId>,
    maps: Vec<NodeId>,
    out: &mut Vec<MemletPath>,
) {
    path.push(edge);
    let e = state.edge(edge);
    if matches!(state.node(e.dst).kind, NodeKind::MapEntry { .. }) {
        if let Some(key) = passthrough_key(e.dst_conn.as_deref()) {
            let want = out_conn(key);
            let mut maps = maps;
            maps.push(e.dst);
            for inner in sorted(state.out_edges(e.dst)) {
                if state.edge(inner).src_conn.as_deref() == Some(want.as_str()) {
                    walk_down(state, inner, path.clone(), maps.clone(), out);
                }
            }
            return;
        }
    }
    out.push(MemletPath {
        innermost: e.memlet.clone(),
        leaf: e.dst,
        leaf_conn: e.dst_conn.clone(),
        edges: path,
        maps,
    });
}

/// All write lineages ending at the in-edges of an access node.
pub fn trace_writes(state: &State, access: NodeId) -> Vec<MemletPath> {
    let mut out = Vec::new();
    for edge in sorted(state.in_edges(access)) {
        walk_up(state, edge, Vec::new(), Vec::new(), &mut out);
    }
    out
}

fn walk_up(
    state: &State,
    edge: EdgeId,
    mut path: Vec<EdgeId>,
    maps: Vec<NodeId>,
    out: &mut Vec<MemletPath>,
) {
    path.push(edge);
    let e = state.edge(edge);
    if let NodeKind::MapExit { entry } = state.node(e.src).kind {
        if let Some(key) = passthrough_key(e.src_conn.as_deref()) {
            let want = in_conn(key);
            let mut maps = maps;
            maps.push(entry);
            for inner in sorted(state.in_edges(e.src)) {
                if state.edge(inner).dst_conn.as_deref() == Some(want.as_str()) {
                    walk_up(state, inner, path.clone(), maps.clone(), out);
                }
            }
            return;
        }
    }
    out.push(MemletPath {
        innermost: e.memlet.clone(),
        leaf: e.src,
        leaf_conn: e.src_conn.clone(),
        edges: path,
        maps,
    });
}

fn sorted(mut ids: Vec<EdgeId>) -> Vec<EdgeId> {
    ids.sort_unstable();
    ids
}
