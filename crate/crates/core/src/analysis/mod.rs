//! Read-only analyses over validated graphs: processing-element enumeration,
//! off-chip data-movement accounting, stream balance, and reachability.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ir::{ContainerKind, NodeId, NodeKind, Sdfg, State, StateId, StorageKind};
use crate::par;
use crate::symbolic::{SymBinding, SymError, SymExpr};

/// Role of a processing element, inferred from what it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PeRole {
    /// Reads a DRAM container and feeds streams.
    Reader,
    /// Drains streams into a DRAM container.
    Writer,
    Compute,
    Unknown,
}

/// One weakly connected component of a state's dataflow graph. A component
/// whose top-level scope is an unrolled map stands for `instances` PEs.
#[derive(Debug, Clone, Serialize)]
pub struct PeComponent {
    /// Member nodes, ascending.
    pub nodes: Vec<NodeId>,
    pub role: PeRole,
    /// Containers accessed through access nodes.
    pub containers: Vec<String>,
    /// Replication factor: the extent of a top-level unrolled map, else 1.
    pub instances: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeSet {
    pub state: String,
    /// Components ordered by smallest member node id.
    pub components: Vec<PeComponent>,
}

impl PeSet {
    /// Total processing elements, counting unrolled replication.
    pub fn pe_count(&self) -> u64 {
        self.components.iter().map(|c| c.instances).sum()
    }

    pub fn component_of(&self, node: NodeId) -> Option<usize> {
        self.components.iter().position(|c| c.nodes.contains(&node))
    }
}

/// Weakly connected components of the dataflow multigraph, ordered by their
/// smallest node id. Each instance of a top-level unrolled map counts as a
/// separate processing element via `instances`.
pub fn connected_components(sdfg: &Sdfg, state_id: StateId) -> PeSet {
    let state = sdfg.state(state_id);
    let ids: Vec<NodeId> = state.node_ids().collect();
    let mut parent: BTreeMap<NodeId, NodeId> = ids.iter().map(|id| (*id, *id)).collect();

    fn find(parent: &mut BTreeMap<NodeId, NodeId>, id: NodeId) -> NodeId {
        let mut root = id;
        while parent[&root] != root {
            root = parent[&root];
        }
        let mut cur = id;
        while parent[&cur] != root {
            let next = parent[&cur];
            parent.insert(cur, root);
            cur = next;
        }
        root
    }

    for (_, edge) in state.edges() {
        let a = find(&mut parent, edge.src);
        let b = find(&mut parent, edge.dst);
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent.insert(hi, lo);
        }
    }
    // Scope membership also joins (an access node inside a map scope belongs
    // to the map's component even before edges connect them).
    for id in &ids {
        if let Some(p) = state.node(*id).parent {
            let a = find(&mut parent, *id);
            let b = find(&mut parent, p);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent.insert(hi, lo);
            }
        }
    }

    let mut groups: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for id in &ids {
        let root = find(&mut parent, *id);
        groups.entry(root).or_default().push(*id);
    }

    let components = groups
        .into_values()
        .map(|nodes| classify_component(sdfg, state, nodes))
        .collect();
    PeSet {
        state: state.name.clone(),
        components,
    }
}

fn classify_component(sdfg: &Sdfg, state: &State, nodes: Vec<NodeId>) -> PeComponent {
    let mut containers = BTreeSet::new();
    let mut reads_dram = false;
    let mut writes_dram = false;
    let mut computes = false;
    for id in &nodes {
        match &state.node(*id).kind {
            NodeKind::Access { data } => {
                containers.insert(data.clone());
                let Some(desc) = sdfg.container(data) else {
                    continue;
                };
                if desc.storage.is_dram() {
                    if !state.out_edges(*id).is_empty() {
                        reads_dram = true;
                    }
                    if !state.in_edges(*id).is_empty() {
                        writes_dram = true;
                    }
                }
            }
            NodeKind::Tasklet(t) => {
                // A bare copy body does not make a component computational.
                if t.body.iter().any(|a| !matches!(a.value, crate::ir::ValueExpr::Ref(_))) {
                    computes = true;
                }
            }
            NodeKind::Library(_) | NodeKind::Nested { .. } => computes = true,
            _ => {}
        }
    }
    let role = match (computes, reads_dram, writes_dram) {
        (true, _, _) => PeRole::Compute,
        (false, true, false) => PeRole::Reader,
        (false, false, true) => PeRole::Writer,
        (false, true, true) => PeRole::Compute,
        _ => PeRole::Unknown,
    };
    // Top-level unrolled maps replicate the whole component per instance.
    let mut instances = 1u64;
    for id in &nodes {
        let node = state.node(*id);
        if node.parent.is_none() {
            if let NodeKind::MapEntry {
                ranges,
                schedule: crate::ir::MapSchedule::Unrolled,
                ..
            } = &node.kind
            {
                let extent: u64 = ranges
                    .iter()
                    .map(|r| {
                        r.count()
                            .evaluate(&SymBinding::new())
                            .map(|v| v.max(0) as u64)
                            .unwrap_or(1)
                    })
                    .product();
                instances = instances.saturating_mul(extent.max(1));
            }
        }
    }
    PeComponent {
        nodes,
        role,
        containers: containers.into_iter().collect(),
        instances,
    }
}

/// Stable processing-element names: readers are `read_<container>`, writers
/// `write_<container>`, compute elements `compute`, `compute_1`, ... in
/// component order. A component replicated by a top-level unrolled map
/// contributes one name per instance. Returns `(component index, name)` per
/// instance.
pub fn pe_instance_names(sdfg: &Sdfg, pes: &PeSet) -> Vec<(usize, String)> {
    let mut names = Vec::new();
    let mut compute_counter = 0usize;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, comp) in pes.components.iter().enumerate() {
        match comp.role {
            PeRole::Reader | PeRole::Writer => {
                let prefix = if comp.role == PeRole::Reader {
                    "read"
                } else {
                    "write"
                };
                let container = comp
                    .containers
                    .iter()
                    .find(|c| {
                        sdfg.container(c)
                            .map(|d| d.storage.is_dram())
                            .unwrap_or(false)
                    })
                    .or_else(|| comp.containers.first())
                    .cloned()
                    .unwrap_or_else(|| idx.to_string());
                let container = container.strip_prefix("fpga_").unwrap_or(&container);
                let mut name = format!("{prefix}_{container}");
                let n = seen.entry(name.clone()).or_insert(0);
                if *n > 0 {
                    name = format!("{name}_{n}");
                }
                *n += 1;
                names.push((idx, name));
            }
            PeRole::Compute | PeRole::Unknown => {
                for _ in 0..comp.instances.max(1) {
                    let name = if compute_counter == 0 {
                        "compute".to_string()
                    } else {
                        format!("compute_{compute_counter}")
                    };
                    compute_counter += 1;
                    names.push((idx, name));
                }
            }
        }
    }
    names
}

// ---------------------------------------------------------------------------
// Off-chip volume accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct ContainerTraffic {
    pub read_bytes: u64,
    pub written_bytes: u64,
}

impl ContainerTraffic {
    pub fn total(&self) -> u64 {
        self.read_bytes + self.written_bytes
    }
}

/// Bytes moved to and from DRAM-class storage per program execution.
/// Kernel traffic (inside compute states) and host<->device copy traffic are
/// reported separately.
#[derive(Debug, Clone, Default, Serialize)]
pub struct VolumeReport {
    /// Per-container kernel traffic, name-sorted.
    pub containers: BTreeMap<String, ContainerTraffic>,
    /// Total bytes moved by compute-state memlets on DRAM containers.
    pub kernel_bytes: u64,
    /// Total bytes moved by host<->device copy edges in pre/post states.
    pub copy_bytes: u64,
    /// Containers whose traffic could not be accounted (dynamic memlets).
    pub unbounded: Vec<String>,
}

pub const GIB: f64 = (1u64 << 30) as f64;

impl VolumeReport {
    pub fn kernel_gib(&self) -> f64 {
        self.kernel_bytes as f64 / GIB
    }

    /// Sum of kernel traffic over the given containers.
    pub fn bytes_for(&self, names: &[&str]) -> u64 {
        names
            .iter()
            .filter_map(|n| self.containers.get(*n))
            .map(|t| t.total())
            .sum()
    }
}

/// Classifies a state as a host<->device copy stage: every edge connects two
/// access nodes and at least one endpoint pair crosses the host/device line.
fn is_copy_state(sdfg: &Sdfg, state: &State) -> bool {
    let mut any_cross = false;
    for (_, edge) in state.edges() {
        let (NodeKind::Access { data: src }, NodeKind::Access { data: dst }) = (
            &state.node(edge.src).kind,
            &state.node(edge.dst).kind,
        ) else {
            return false;
        };
        let (Some(s), Some(d)) = (sdfg.container(src), sdfg.container(dst)) else {
            return false;
        };
        if (s.storage == StorageKind::HostDram) != (d.storage == StorageKind::HostDram) {
            any_cross = true;
        }
    }
    any_cross
}

/// Sums evaluated memlet volumes over edges incident to access nodes of
/// DRAM-class containers in compute states; host<->device copies are summed
/// separately. Vector elements count as width times the base size.
pub fn offchip_volume(sdfg: &Sdfg, binding: &SymBinding) -> Result<VolumeReport, SymError> {
    let mut report = VolumeReport::default();
    let mut unbounded = BTreeSet::new();
    for state_id in sdfg.state_ids() {
        let state = sdfg.state(state_id);
        let copy_state = is_copy_state(sdfg, state);
        for node in state.nodes() {
            let NodeKind::Access { data } = &node.kind else {
                continue;
            };
            let Some(desc) = sdfg.container(data) else {
                continue;
            };
            if !desc.storage.is_dram() {
                continue;
            }
            let elem_bytes = desc.element.byte_size();
            for (dir_in, edges) in [(false, state.out_edges(node.id)), (true, state.in_edges(node.id))] {
                for eid in edges {
                    let edge = state.edge(eid);
                    if edge.memlet.dynamic {
                        unbounded.insert(data.clone());
                        continue;
                    }
                    let volume = edge.memlet.volume.evaluate(binding)?.max(0) as u64;
                    let bytes = volume * elem_bytes;
                    if copy_state {
                        // A DRAM-to-DRAM copy edge is counted once, at its
                        // write side.
                        let other = if dir_in { edge.src } else { edge.dst };
                        let other_is_dram = match &state.node(other).kind {
                            NodeKind::Access { data: other_data } => sdfg
                                .container(other_data)
                                .map(|d| d.storage.is_dram())
                                .unwrap_or(false),
                            _ => false,
                        };
                        if other_is_dram && !dir_in {
                            continue;
                        }
                        report.copy_bytes += bytes;
                        continue;
                    }
                    let entry = report.containers.entry(data.clone()).or_default();
                    if dir_in {
                        entry.written_bytes += bytes;
                    } else {
                        entry.read_bytes += bytes;
                    }
                    report.kernel_bytes += bytes;
                }
            }
        }
    }
    report.unbounded = unbounded.into_iter().collect();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stream balance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStatus {
    Balanced,
    Mismatch,
    Undecidable,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceDiagnostic {
    pub stream: String,
    pub status: BalanceStatus,
    pub producer_volume: Option<SymExpr>,
    pub consumer_volume: Option<SymExpr>,
    pub message: String,
}

/// Compares, per stream, the canonicalized total producer volume against the
/// total consumer volume. Dynamic sides are reported as undecidable.
pub fn stream_balance_check(sdfg: &Sdfg, state_id: StateId) -> Vec<BalanceDiagnostic> {
    let state = sdfg.state(state_id);
    let mut streams: BTreeMap<String, (Option<SymExpr>, Option<SymExpr>, bool, bool)> =
        BTreeMap::new();
    // (producer total, consumer total, producer dynamic, consumer dynamic)
    for node in state.nodes() {
        let NodeKind::Access { data } = &node.kind else {
            continue;
        };
        let Some(desc) = sdfg.container(data) else {
            continue;
        };
        if desc.kind != ContainerKind::Stream {
            continue;
        }
        let entry = streams
            .entry(data.clone())
            .or_insert((None, None, false, false));
        for eid in state.in_edges(node.id) {
            let m = &state.edge(eid).memlet;
            if m.dynamic {
                entry.2 = true;
            } else {
                let cur = entry.0.take().unwrap_or_else(SymExpr::zero);
                entry.0 = Some(cur.add(&m.volume));
            }
        }
        for eid in state.out_edges(node.id) {
            let m = &state.edge(eid).memlet;
            if m.dynamic {
                entry.3 = true;
            } else {
                let cur = entry.1.take().unwrap_or_else(SymExpr::zero);
                entry.1 = Some(cur.add(&m.volume));
            }
        }
    }
    let mut out = Vec::new();
    for (stream, (produced, consumed, p_dyn, c_dyn)) in streams {
        if p_dyn || c_dyn {
            out.push(BalanceDiagnostic {
                message: format!("stream `{stream}` has dynamic-volume endpoints; balance undecidable"),
                stream,
                status: BalanceStatus::Undecidable,
                producer_volume: produced,
                consumer_volume: consumed,
            });
            continue;
        }
        let (Some(p), Some(c)) = (produced.clone(), consumed.clone()) else {
            // Only one side present in this state; nothing to compare.
            continue;
        };
        if p == c {
            out.push(BalanceDiagnostic {
                message: format!("stream `{stream}` balanced at volume {p}"),
                stream,
                status: BalanceStatus::Balanced,
                producer_volume: Some(p),
                consumer_volume: Some(c),
            });
        } else {
            out.push(BalanceDiagnostic {
                message: format!(
                    "stream `{stream}` produces {p} but consumes {c}"
                ),
                stream,
                status: BalanceStatus::Mismatch,
                producer_volume: Some(p),
                consumer_volume: Some(c),
            });
        }
    }
    out
}

/// Balance diagnostics for every state, in state order.
pub fn stream_balance_all(sdfg: &Sdfg) -> Vec<BalanceDiagnostic> {
    let per_state = par::map_collect(sdfg.state_ids().collect(), |id| {
        stream_balance_check(sdfg, id)
    });
    per_state.into_iter().flatten().collect()
}

// ---------------------------------------------------------------------------
// Reachability
// ---------------------------------------------------------------------------

/// True iff `to` is reachable from `from` along dataflow edges (reflexive).
pub fn depends(state: &State, from: NodeId, to: NodeId) -> bool {
    if from == to {
        return true;
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(cur) = stack.pop() {
        if !seen.insert(cur) {
            continue;
        }
        for eid in state.out_edges(cur) {
            let dst = state.edge(eid).dst;
            if dst == to {
                return true;
            }
            stack.push(dst);
        }
    }
    false
}
