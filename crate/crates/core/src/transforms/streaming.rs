//! Streaming rewrites: extracting DRAM accesses into reader/writer elements
//! that feed streams, fusing producer/consumer pairs over equivalent access
//! orders into direct streams, and replicating multi-consumer containers so
//! fusion can apply per consumer.

use std::collections::BTreeMap;

use super::{check_valid, kernel_access_profile, PassError, PassReport};
use crate::analysis::depends;
use crate::ir::build::read_through;
use crate::ir::path::{trace_reads, trace_writes, MemletPath};
use crate::ir::{
    ContainerKind, DataDescriptor, EdgeId, MapSchedule, Memlet, NodeId, NodeKind, RangeExpr, Sdfg,
    StateId, StorageKind, Tasklet, TaskletInput,
};
use crate::symbolic::SymExpr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Read,
    Write,
}

/// Canonical access order of a traced path: map ranges and index expressions
/// with parameters renamed to positional indices. `None` when the path is
/// not a unit-element streaming pattern.
fn order_key(state: &crate::ir::State, path: &MemletPath) -> Option<String> {
    if path.maps.is_empty() || path.innermost.dynamic {
        return None;
    }
    if !path.innermost.subset.iter().all(|r| r.is_point()) {
        return None;
    }
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut ranges: Vec<RangeExpr> = Vec::new();
    for entry in &path.maps {
        let NodeKind::MapEntry {
            params,
            ranges: rs,
            schedule,
        } = &state.node(*entry).kind
        else {
            return None;
        };
        if *schedule != MapSchedule::Pipelined {
            return None;
        }
        for (p, r) in params.iter().zip(rs) {
            let positional = format!("__p{}", rename.len());
            rename.insert(p.clone(), positional);
            ranges.push(r.clone());
        }
    }
    let mut key = String::new();
    for r in &ranges {
        key.push_str(&format!(
            "[{}:{}:{}]",
            r.begin.rename(&rename),
            r.end.rename(&rename),
            r.stride.rename(&rename)
        ));
    }
    key.push('@');
    for r in &path.innermost.subset {
        key.push_str(&format!("({})", r.begin.rename(&rename)));
    }
    Some(key)
}

/// The map levels of a path as (params, ranges) tuples, outermost first.
fn map_levels(state: &crate::ir::State, path: &MemletPath) -> Vec<(Vec<String>, Vec<RangeExpr>)> {
    path.maps
        .iter()
        .map(|entry| match &state.node(*entry).kind {
            NodeKind::MapEntry { params, ranges, .. } => (params.clone(), ranges.clone()),
            _ => unreachable!("path maps are entries"),
        })
        .collect()
}

fn stream_desc(sdfg: &Sdfg, base: &DataDescriptor, name: &str) -> DataDescriptor {
    let _ = sdfg;
    DataDescriptor::stream(name, base.element, Vec::new())
}

/// True when the leaf tasklet already feeds (or is fed by) streams on the
/// opposite side: such a node *is* a streaming accessor, and extracting it
/// again would stack reader upon reader.
fn already_streaming(sdfg: &Sdfg, state: &crate::ir::State, leaf: NodeId, side: Side) -> bool {
    let edges = match side {
        Side::Read => state.out_edges(leaf),
        Side::Write => state.in_edges(leaf),
    };
    edges.iter().any(|eid| {
        let m = &state.edge(*eid).memlet;
        sdfg.container(&m.data)
            .map(|d| d.kind == ContainerKind::Stream)
            .unwrap_or(false)
    })
}

/// Extracts the read (or write) side of one DRAM access node into a separate
/// streaming component. Consumers sharing the same canonical access order
/// share one reader feeding one stream each; dependent consumers are split
/// into separate components.
pub fn streaming_memory(
    sdfg: &mut Sdfg,
    state_id: StateId,
    access: NodeId,
    side: Side,
) -> Result<PassReport, PassError> {
    const PASS: &str = "streaming-memory";
    let fail = |message: String| PassError::Failed {
        pass: PASS.to_string(),
        message,
    };
    let state = sdfg.state(state_id);
    let NodeKind::Access { data } = &state.node(access).kind else {
        return Err(fail("target is not an access node".to_string()));
    };
    let data = data.clone();
    let desc = sdfg
        .container(&data)
        .ok_or_else(|| fail(format!("unknown container `{data}`")))?
        .clone();
    if desc.storage != StorageKind::DeviceDram {
        return Err(fail(format!("container `{data}` is not device DRAM")));
    }
    if state.node(access).parent.is_some() {
        return Err(fail("access node sits inside a map scope".to_string()));
    }

    let paths = match side {
        Side::Read => trace_reads(state, access),
        Side::Write => trace_writes(state, access),
    };
    if paths.is_empty() {
        return Ok(PassReport::skipped(PASS, "no accesses on this side"));
    }
    let mut eligible: Vec<(String, MemletPath)> = Vec::new();
    for path in paths.iter() {
        if side == Side::Write && path.innermost.wcr.is_some() {
            continue;
        }
        if !matches!(state.node(path.leaf).kind, NodeKind::Tasklet(_)) {
            continue;
        }
        if already_streaming(sdfg, state, path.leaf, side) {
            continue;
        }
        if let Some(key) = order_key(state, path) {
            eligible.push((key, path.clone()));
        }
    }
    if eligible.is_empty() {
        return Err(fail(format!(
            "no unit-element access pattern on `{data}` (non-unit range, dynamic memlet, or no map)"
        )));
    }

    // Group by identical order, then split dependent consumers.
    let mut groups: Vec<(String, Vec<MemletPath>)> = Vec::new();
    for (key, path) in eligible {
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(path),
            None => groups.push((key, vec![path])),
        }
    }
    let mut subgroups: Vec<Vec<MemletPath>> = Vec::new();
    for (_, members) in groups {
        let mut buckets: Vec<Vec<MemletPath>> = Vec::new();
        'member: for path in members {
            for bucket in buckets.iter_mut() {
                let independent = bucket.iter().all(|other| {
                    !depends(state, path.leaf, other.leaf) && !depends(state, other.leaf, path.leaf)
                });
                if independent {
                    bucket.push(path);
                    continue 'member;
                }
            }
            buckets.push(vec![path]);
        }
        subgroups.extend(buckets);
    }

    // Edges to delete: all processed path edges (they are replaced).
    let mut delete: Vec<EdgeId> = Vec::new();
    let mut sites = Vec::new();
    let mut stream_counter = 0usize;
    let mut planned: Vec<(Vec<MemletPath>, Vec<String>)> = Vec::new();
    for group in subgroups {
        let mut streams = Vec::new();
        for path in &group {
            let name = sdfg.fresh_container_name(&format!("{data}_s{stream_counter}"));
            stream_counter += 1;
            sdfg.add_container(stream_desc(sdfg, &desc, &name))
                .map_err(|e| fail(e.to_string()))?;
            streams.push(name);
            delete.extend(&path.edges);
        }
        planned.push((group, streams));
    }

    let state = sdfg.state_mut(state_id);
    delete.sort_unstable();
    delete.dedup();
    for eid in delete {
        state.remove_edge(eid);
    }

    for (group, streams) in &planned {
        // Reader/writer component replicating the first path's order.
        let levels = map_levels(state, &group[0]);
        let mut entries = Vec::new();
        let mut exits = Vec::new();
        let mut scope = None;
        for (params, ranges) in &levels {
            let (entry, exit) = state.map_scope(
                scope,
                params.iter().map(|s| s.as_str()).collect(),
                ranges.clone(),
                MapSchedule::Pipelined,
            );
            entries.push(entry);
            exits.push(exit);
            scope = Some(entry);
        }
        exits.reverse();
        match side {
            Side::Read => {
                let outputs: Vec<String> = (0..streams.len()).map(|i| format!("o{i}")).collect();
                let t = state.tasklet_node(
                    scope,
                    Tasklet {
                        name: format!("stream_{data}"),
                        inputs: vec![TaskletInput::new("v")],
                        outputs: outputs.clone(),
                        body: outputs
                            .iter()
                            .map(|o| crate::ir::Assign::new(o.clone(), crate::ir::ValueExpr::var("v")))
                            .collect(),
                        constants: Vec::new(),
                    },
                );
                let src = state.access(None, &data);
                let hops: Vec<(NodeId, Memlet)> = entries
                    .iter()
                    .map(|e| (*e, Memlet::all(&desc)))
                    .collect();
                read_through(state, src, &hops, t, "v", group[0].innermost.clone(), &data);
                for (i, stream) in streams.iter().enumerate() {
                    let acc = state.access(None, stream);
                    crate::ir::build::write_through(
                        state,
                        t,
                        &format!("o{i}"),
                        Memlet::scalar(stream),
                        &exits.iter().map(|e| (*e, Memlet::scalar(stream))).collect::<Vec<_>>(),
                        acc,
                        stream,
                        None,
                    );
                }
                // Rewire each consumer to pop its stream through its own maps.
                for (path, stream) in group.iter().zip(streams) {
                    let acc = state.access(None, stream);
                    let hops: Vec<(NodeId, Memlet)> = path
                        .maps
                        .iter()
                        .map(|e| (*e, Memlet::scalar(stream)))
                        .collect();
                    read_through(
                        state,
                        acc,
                        &hops,
                        path.leaf,
                        path.leaf_conn.as_deref().unwrap_or("v"),
                        Memlet::scalar(stream),
                        stream,
                    );
                }
            }
            Side::Write => {
                // One writer per stream (single-producer each).
                for (path, stream) in group.iter().zip(streams) {
                    let inner = {
                        let mut m = group[0].innermost.clone();
                        m.wcr = None;
                        m
                    };
                    let t = state.tasklet_node(
                        scope,
                        Tasklet::parse(&format!("store_{data}"), &["v"], &["o"], "o = v").unwrap(),
                    );
                    let s_acc = state.access(None, stream);
                    let hops: Vec<(NodeId, Memlet)> = entries
                        .iter()
                        .map(|e| (*e, Memlet::scalar(stream)))
                        .collect();
                    read_through(state, s_acc, &hops, t, "v", Memlet::scalar(stream), stream);
                    let dst = state.access(None, &data);
                    crate::ir::build::write_through(
                        state,
                        t,
                        "o",
                        inner,
                        &exits.iter().map(|e| (*e, Memlet::all(&desc))).collect::<Vec<_>>(),
                        dst,
                        &data,
                        None,
                    );
                    // Producer pushes the stream through its own exits.
                    let p_acc = state.access(None, stream);
                    let p_exits: Vec<(NodeId, Memlet)> = path
                        .maps
                        .iter()
                        .rev()
                        .map(|entry| {
                            let exit = state.exit_of(*entry).expect("paired exit");
                            (exit, Memlet::scalar(stream))
                        })
                        .collect();
                    crate::ir::build::write_through(
                        state,
                        path.leaf,
                        path.leaf_conn.as_deref().unwrap_or("o"),
                        Memlet::scalar(stream),
                        &p_exits,
                        p_acc,
                        stream,
                        None,
                    );
                }
            }
        }
        sites.push(format!(
            "{}: {} {} consumer(s) via {} stream(s)",
            state.name,
            data,
            group.len(),
            streams.len()
        ));
    }

    // Drop the original access node if nothing references it anymore.
    if state.in_edges(access).is_empty() && state.out_edges(access).is_empty() {
        state.remove_node(access);
    }
    crate::ir::path::autovolume(sdfg, state_id);
    check_valid(PASS, sdfg)?;
    Ok(PassReport::applied(PASS, sites))
}

/// Batch extraction: in every compute state, read-only external DRAM
/// containers get reader components and write-only ones writer components,
/// in deterministic order.
pub(crate) fn streaming_memory_batch(sdfg: &mut Sdfg) -> Result<PassReport, PassError> {
    let profile = kernel_access_profile(sdfg);
    let mut sites = Vec::new();
    for state_id in sdfg.state_ids().collect::<Vec<_>>() {
        if !sdfg.is_device_kernel_state(state_id) {
            continue;
        }
        loop {
            // Re-scan after each extraction: node ids shift as rewrites land.
            let state = sdfg.state(state_id);
            let mut candidate = None;
            for node in state.nodes() {
                let NodeKind::Access { data } = &node.kind else {
                    continue;
                };
                let Some((reads, writes)) = profile.get(data) else {
                    continue;
                };
                let side = match (reads, writes) {
                    (true, false) if !state.out_edges(node.id).is_empty() => Side::Read,
                    (false, true) if !state.in_edges(node.id).is_empty() => Side::Write,
                    _ => continue,
                };
                // Only map-shaped unit accesses are extractable.
                let paths = match side {
                    Side::Read => trace_reads(state, node.id),
                    Side::Write => trace_writes(state, node.id),
                };
                let extractable = paths.iter().any(|p| {
                    order_key(state, p).is_some()
                        && (side == Side::Read || p.innermost.wcr.is_none())
                        && matches!(state.node(p.leaf).kind, NodeKind::Tasklet(_))
                        && !already_streaming(sdfg, state, p.leaf, side)
                });
                if extractable {
                    candidate = Some((node.id, side));
                    break;
                }
            }
            let Some((node, side)) = candidate else {
                break;
            };
            let report = streaming_memory(sdfg, state_id, node, side)?;
            sites.extend(report.sites);
        }
    }
    Ok(if sites.is_empty() {
        PassReport::skipped("streaming-memory", "no extractable DRAM accesses")
    } else {
        PassReport::applied("streaming-memory", sites)
    })
}

/// Fuses a single-writer single-reader transient array into a direct stream
/// when both sides traverse it in the same canonical order.
pub fn streaming_composition(sdfg: &mut Sdfg, array: &str) -> Result<PassReport, PassError> {
    const PASS: &str = "streaming-composition";
    let fail = |message: String| PassError::Failed {
        pass: PASS.to_string(),
        message,
    };
    let desc = sdfg
        .container(array)
        .ok_or_else(|| fail(format!("unknown container `{array}`")))?
        .clone();
    if desc.kind == ContainerKind::Stream {
        return Ok(PassReport::skipped(PASS, "already a stream"));
    }
    if !desc.transient {
        return Ok(PassReport::skipped(PASS, "not transient"));
    }
    // Locate accesses: all in one state.
    let mut found: Option<StateId> = None;
    for state_id in sdfg.state_ids() {
        if sdfg.state(state_id).accessed_containers().contains(array) {
            if found.is_some() {
                return Ok(PassReport::skipped(PASS, "accessed in multiple states"));
            }
            found = Some(state_id);
        }
    }
    let Some(state_id) = found else {
        return Ok(PassReport::skipped(PASS, "container is never accessed"));
    };
    let state = sdfg.state(state_id);
    let mut write_paths = Vec::new();
    let mut read_paths = Vec::new();
    let mut nodes = Vec::new();
    for node in state.nodes() {
        if matches!(&node.kind, NodeKind::Access { data } if data == array) {
            nodes.push(node.id);
            write_paths.extend(trace_writes(state, node.id));
            read_paths.extend(trace_reads(state, node.id));
        }
    }
    if write_paths.len() != 1 {
        return Ok(PassReport::skipped(
            PASS,
            format!("{} writers; need exactly one", write_paths.len()),
        ));
    }
    if read_paths.len() != 1 {
        return Ok(PassReport::skipped(
            PASS,
            format!(
                "{} readers; need exactly one (consider replication)",
                read_paths.len()
            ),
        ));
    }
    let (w_path, r_path) = (&write_paths[0], &read_paths[0]);
    if w_path.innermost.wcr.is_some() {
        return Ok(PassReport::skipped(PASS, "writer uses conflict resolution"));
    }
    let (Some(w_key), Some(r_key)) = (order_key(state, w_path), order_key(state, r_path)) else {
        return Ok(PassReport::skipped(PASS, "access is not a unit-element pattern"));
    };
    if w_key != r_key {
        return Ok(PassReport::skipped(
            PASS,
            format!("access orders differ: writer {w_key} vs reader {r_key}"),
        ));
    }

    // Rewrite the container into a stream and both paths into push/pop.
    let w_edges = w_path.edges.clone();
    let r_edges = r_path.edges.clone();
    let r_first = r_edges[0];
    {
        let d = sdfg.containers.get_mut(array).unwrap();
        d.kind = ContainerKind::Stream;
        d.shape = Vec::new();
        d.storage = StorageKind::OnChipLocal;
        d.capacity = Some(crate::ir::DEFAULT_STREAM_CAPACITY);
    }
    let state = sdfg.state_mut(state_id);
    for eid in w_edges.iter().chain(r_edges.iter()) {
        let memlet = &mut state.edge_mut(*eid).memlet;
        memlet.subset = Vec::new();
        memlet.wcr = None;
    }
    // Separate reader-side access node, keeping the state acyclic with
    // distinct producer/consumer nodes.
    let reader_acc = state.access(None, array);
    state.edge_mut(r_first).src = reader_acc;

    crate::ir::path::autovolume(sdfg, state_id);
    check_valid(PASS, sdfg)?;
    Ok(PassReport::applied(
        PASS,
        vec![format!("{array}: array round-trip fused into a stream")],
    ))
}

/// Batch fusion over every transient array, in declaration order.
pub(crate) fn streaming_composition_batch(sdfg: &mut Sdfg) -> Result<PassReport, PassError> {
    let candidates: Vec<String> = sdfg
        .containers
        .values()
        .filter(|d| d.transient && d.kind != ContainerKind::Stream)
        .map(|d| d.name.clone())
        .collect();
    let mut sites = Vec::new();
    for name in candidates {
        let report = streaming_composition(sdfg, &name)?;
        if report.applied {
            sites.extend(report.sites);
        }
    }
    Ok(if sites.is_empty() {
        PassReport::skipped("streaming-composition", "no fusable transients")
    } else {
        PassReport::applied("streaming-composition", sites)
    })
}

/// Replicates a single-writer multi-reader transient container into one copy
/// per reader, so each copy becomes independently eligible for fusion. The
/// original writer feeds every copy.
pub fn replicate_container(sdfg: &mut Sdfg, array: &str) -> Result<PassReport, PassError> {
    const PASS: &str = "replicate";
    let fail = |message: String| PassError::Failed {
        pass: PASS.to_string(),
        message,
    };
    let desc = sdfg
        .container(array)
        .ok_or_else(|| fail(format!("unknown container `{array}`")))?
        .clone();
    if desc.kind == ContainerKind::Stream {
        return Err(fail("cannot replicate a stream".to_string()));
    }
    if !desc.transient {
        return Err(fail("only transient containers can be replicated".to_string()));
    }
    let mut found: Option<StateId> = None;
    for state_id in sdfg.state_ids() {
        if sdfg.state(state_id).accessed_containers().contains(array) {
            found = Some(state_id);
        }
    }
    let Some(state_id) = found else {
        return Err(fail("container is never accessed".to_string()));
    };
    let state = sdfg.state(state_id);
    let mut write_paths = Vec::new();
    let mut read_paths = Vec::new();
    for node in state.nodes() {
        if matches!(&node.kind, NodeKind::Access { data } if data == array) {
            write_paths.extend(trace_writes(state, node.id));
            read_paths.extend(trace_reads(state, node.id));
        }
    }
    if write_paths.len() != 1 {
        return Err(fail(format!(
            "{} writers; replication needs exactly one",
            write_paths.len()
        )));
    }
    if read_paths.len() < 2 {
        return Err(fail(format!(
            "{} reader(s); replication needs at least two",
            read_paths.len()
        )));
    }
    if write_paths[0].innermost.wcr.is_some() {
        return Err(fail("writer uses conflict resolution".to_string()));
    }

    let k = read_paths.len();
    let mut copies = Vec::with_capacity(k);
    for i in 0..k {
        let name = sdfg.fresh_container_name(&format!("{array}_copy{i}"));
        let mut copy = desc.clone();
        copy.name = name.clone();
        sdfg.add_container(copy).map_err(|e| fail(e.to_string()))?;
        copies.push(name);
    }

    let w_path = write_paths[0].clone();
    let state = sdfg.state_mut(state_id);
    // The original write path and the first reader keep their edges, renamed
    // to the first copy.
    for eid in &w_path.edges {
        state.edge_mut(*eid).memlet.data = copies[0].clone();
    }
    for eid in &read_paths[0].edges {
        state.edge_mut(*eid).memlet.data = copies[0].clone();
    }
    // The shared access node becomes the first copy's node.
    let shared_node = state.edge(w_path.edges[0]).dst;
    if let NodeKind::Access { data } = &mut state.node_mut(shared_node).kind {
        *data = copies[0].clone();
    }

    // Duplicate the writer's output through the same exits into the other
    // copies, and repoint each remaining reader.
    let exits: Vec<NodeId> = w_path
        .edges
        .iter()
        .rev()
        .skip(1)
        .map(|eid| state.edge(*eid).src)
        .collect();
    for (i, copy) in copies.iter().enumerate().skip(1) {
        let inner = {
            let mut m = w_path.innermost.clone();
            m.data = copy.clone();
            m
        };
        let copy_desc = {
            let mut d = desc.clone();
            d.name = copy.clone();
            d
        };
        let hops: Vec<(NodeId, Memlet)> = exits
            .iter()
            .map(|exit| (*exit, Memlet::all(&copy_desc)))
            .collect();
        let acc = state.access(None, copy);
        crate::ir::build::write_through(
            state,
            w_path.leaf,
            w_path.leaf_conn.as_deref().unwrap_or("o"),
            inner,
            &hops,
            acc,
            &format!("rep{i}"),
            None,
        );
        for eid in &read_paths[i].edges {
            state.edge_mut(*eid).memlet.data = copy.clone();
        }
        let first = read_paths[i].edges[0];
        state.edge_mut(first).src = acc;
    }
    sdfg.containers.shift_remove(array);
    crate::ir::path::autovolume(sdfg, state_id);
    check_valid(PASS, sdfg)?;
    Ok(PassReport::applied(
        PASS,
        vec![format!("{array}: replicated into {k} copies")],
    ))
}
