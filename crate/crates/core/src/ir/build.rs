//! Construction helpers for threading memlets through map scopes.
//!
//! A read chain enters each map through an `in_<key>` connector and continues
//! from the matching `out_<key>`; hops already present (e.g. a second
//! consumer of the same container in the same scope) are reused rather than
//! duplicated.

use super::path::{in_conn, out_conn};
use super::{Memlet, NodeId, NodeKind, State, Wcr};

fn find_hop(state: &State, src: NodeId, dst: NodeId, dst_conn: &str) -> bool {
    state.edges().any(|(_, e)| {
        e.src == src && e.dst == dst && e.dst_conn.as_deref() == Some(dst_conn)
    })
}

/// Connects `src` through map entries to `dst`'s input connector. `hops`
/// gives, outermost first, each entry and the memlet for the edge entering
/// it; `inner` is the memlet adjacent to `dst`. Existing hop edges with the
/// same key are reused.
pub fn read_through(
    state: &mut State,
    src: NodeId,
    hops: &[(NodeId, Memlet)],
    dst: NodeId,
    dst_conn: &str,
    inner: Memlet,
    key: &str,
) {
    let mut current = src;
    let mut current_conn: Option<String> = None;
    for (entry, memlet) in hops {
        let dconn = in_conn(key);
        if !find_hop(state, current, *entry, &dconn) {
            state.connect(
                current,
                current_conn.as_deref(),
                *entry,
                Some(&dconn),
                memlet.clone(),
            );
        }
        current = *entry;
        current_conn = Some(out_conn(key));
    }
    state.connect(current, current_conn.as_deref(), dst, Some(dst_conn), inner);
}

/// Connects `src`'s output connector through map exits to `dst`. `hops`
/// gives, innermost first, each exit and the memlet for the edge leaving it
/// towards the next hop (or `dst`). `wcr` and dynamicity of `inner` propagate
/// along the chain.
pub fn write_through(
    state: &mut State,
    src: NodeId,
    src_conn: &str,
    inner: Memlet,
    hops: &[(NodeId, Memlet)],
    dst: NodeId,
    key: &str,
    wcr: Option<Wcr>,
) {
    let dynamic = inner.dynamic;
    let apply = |mut m: Memlet| {
        m.wcr = wcr;
        if dynamic {
            m.dynamic = true;
        }
        m
    };
    if hops.is_empty() {
        state.connect(src, Some(src_conn), dst, None, apply(inner));
        return;
    }
    state.connect(
        src,
        Some(src_conn),
        hops[0].0,
        Some(&in_conn(key)),
        apply(inner),
    );
    for i in 0..hops.len() {
        let (exit, memlet) = &hops[i];
        let (next, next_conn) = match hops.get(i + 1) {
            Some((next_exit, _)) => (*next_exit, Some(in_conn(key))),
            None => (dst, None),
        };
        let exists = state.edges().any(|(_, e)| {
            e.src == *exit
                && e.dst == next
                && e.src_conn.as_deref() == Some(out_conn(key).as_str())
        });
        if !exists {
            state.connect(
                *exit,
                Some(&out_conn(key)),
                next,
                next_conn.as_deref(),
                apply(memlet.clone()),
            );
        }
    }
}

/// Builds a nest of map scopes under `parent`, outermost first.
/// Returns (entries outermost-first, exits innermost-first).
pub fn map_nest(
    state: &mut State,
    parent: Option<NodeId>,
    levels: Vec<(Vec<&str>, Vec<super::RangeExpr>, super::MapSchedule)>,
) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut entries = Vec::new();
    let mut exits = Vec::new();
    let mut scope = parent;
    for (params, ranges, schedule) in levels {
        let (entry, exit) = state.map_scope(scope, params, ranges, schedule);
        entries.push(entry);
        exits.push(exit);
        scope = Some(entry);
    }
    exits.reverse();
    (entries, exits)
}

/// Pairs every entry with the same memlet, for simple read chains.
pub fn hops(entries: &[NodeId], memlet: &Memlet) -> Vec<(NodeId, Memlet)> {
    entries.iter().map(|e| (*e, memlet.clone())).collect()
}

/// Finds the access node feeding a node's input connector, if the edge comes
/// directly from one.
pub fn input_access(state: &State, node: NodeId, conn: &str) -> Option<NodeId> {
    for eid in state.in_edges(node) {
        let e = state.edge(eid);
        if e.dst_conn.as_deref() == Some(conn)
            && matches!(state.node(e.src).kind, NodeKind::Access { .. })
        {
            return Some(e.src);
        }
    }
    None
}

/// Finds the access nodes fed by a node's output connector.
pub fn output_accesses(state: &State, node: NodeId, conn: &str) -> Vec<NodeId> {
    let mut out = Vec::new();
    for eid in state.out_edges(node) {
        let e = state.edge(eid);
        if e.src_conn.as_deref() == Some(conn)
            && matches!(state.node(e.dst).kind, NodeKind::Access { .. })
        {
            out.push(e.dst);
        }
    }
    out
}
