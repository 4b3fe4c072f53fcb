//! Structural validation. Produces diagnostics rather than failing: an empty
//! result means every structural invariant holds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::path::{derived_volume, passthrough_key, trace_reads, trace_writes};
use super::{ContainerKind, EdgeId, NodeId, NodeKind, Sdfg, State, StateId, StorageKind};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Stable rule identifier, e.g. `stream.single-producer`.
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<EdgeId>,
    pub message: String,
}

impl Diagnostic {
    fn error(rule: &str, message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Error,
            rule: rule.to_string(),
            state: None,
            node: None,
            edge: None,
            message,
        }
    }

    fn warning(rule: &str, message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(rule, message)
        }
    }

    fn at_state(mut self, state: &str) -> Diagnostic {
        self.state = Some(state.to_string());
        self
    }

    fn at_node(mut self, node: NodeId) -> Diagnostic {
        self.node = Some(node);
        self
    }

    fn at_edge(mut self, edge: EdgeId) -> Diagnostic {
        self.edge = Some(edge);
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]", self.rule)?;
        if let Some(state) = &self.state {
            write!(f, " in state `{state}`")?;
        }
        if let Some(node) = self.node {
            write!(f, " at node {}", node.0)?;
        }
        if let Some(edge) = self.edge {
            write!(f, " at edge {edge}")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

/// Checks every structural invariant of the graph. Returns an empty list iff
/// the graph is well-formed; diagnostics carry severity and location.
pub fn validate(sdfg: &Sdfg) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_containers(sdfg, &mut out);
    check_control_flow(sdfg, &mut out);
    let per_state = par::map_collect(sdfg.state_ids().collect(), |id| {
        let mut diags = Vec::new();
        check_state(sdfg, id, &mut diags);
        diags
    });
    out.extend(per_state.into_iter().flatten());
    out
}

fn check_containers(sdfg: &Sdfg, out: &mut Vec<Diagnostic>) {
    for desc in sdfg.containers.values() {
        let name = &desc.name;
        if let super::ElementType::Vector { width, .. } = desc.element {
            if width < 1 {
                out.push(Diagnostic::error(
                    "container.vector-width",
                    format!("container `{name}` has vector width {width}; must be >= 1"),
                ));
            }
        }
        match desc.kind {
            ContainerKind::Stream => {
                if desc.capacity.is_none() || desc.capacity == Some(0) {
                    out.push(Diagnostic::error(
                        "container.stream-capacity",
                        format!("stream `{name}` needs a capacity >= 1"),
                    ));
                }
            }
            ContainerKind::Array | ContainerKind::Scalar => {
                if desc.capacity.is_some() {
                    out.push(Diagnostic::error(
                        "container.stream-capacity",
                        format!("non-stream `{name}` must not declare a capacity"),
                    ));
                }
            }
        }
        if desc.kind == ContainerKind::Scalar && !desc.shape.is_empty() {
            out.push(Diagnostic::error(
                "container.scalar-shape",
                format!("scalar `{name}` must have an empty shape"),
            ));
        }
        if !desc.transient && !desc.storage.is_dram() {
            out.push(Diagnostic::error(
                "container.external-storage",
                format!("non-transient `{name}` must live in host or device DRAM"),
            ));
        }
        if desc.storage == StorageKind::ShiftRegister && desc.shape.len() != 1 {
            out.push(Diagnostic::error(
                "container.shift-register-rank",
                format!("shift register `{name}` must be one-dimensional"),
            ));
        }
    }
}

fn check_control_flow(sdfg: &Sdfg, out: &mut Vec<Diagnostic>) {
    if sdfg.states.is_empty() {
        return;
    }
    if sdfg.start.index() >= sdfg.states.len() {
        out.push(Diagnostic::error(
            "sdfg.start-state",
            format!("start state {} out of range", sdfg.start.0),
        ));
    }
    for (i, edge) in sdfg.inter_edges.iter().enumerate() {
        if edge.src.index() >= sdfg.states.len() || edge.dst.index() >= sdfg.states.len() {
            out.push(Diagnostic::error(
                "interstate.endpoints",
                format!("inter-state edge {i} references a missing state"),
            ));
            continue;
        }
        if let Some(cond) = &edge.condition {
            for name in cond.refs() {
                if !sdfg.symbols.iter().any(|s| s == name) {
                    out.push(Diagnostic::error(
                        "interstate.symbols",
                        format!("inter-state condition references unknown symbol `{name}`"),
                    ));
                }
            }
        }
    }
}

fn check_state(sdfg: &Sdfg, id: StateId, out: &mut Vec<Diagnostic>) {
    let state = sdfg.state(id);
    let sname = state.name.clone();
    let mut push = |d: Diagnostic| out.push(d.at_state(&sname));

    // Edge endpoints must be live nodes.
    let mut endpoints_ok = true;
    for (eid, edge) in state.edges() {
        if state.try_node(edge.src).is_none() || state.try_node(edge.dst).is_none() {
            push(Diagnostic::error(
                "edge.endpoints",
                "edge references a removed node".to_string(),
            ).at_edge(eid));
            endpoints_ok = false;
        }
    }
    if !endpoints_ok {
        return;
    }

    if let Err(cycle) = state.topo_order() {
        push(Diagnostic::error(
            "state.acyclic",
            format!(
                "dataflow graph contains a cycle through nodes {:?}",
                cycle.iter().map(|n| n.0).collect::<Vec<_>>()
            ),
        ));
        return;
    }

    check_map_scopes(state, &mut push);
    check_edges(sdfg, state, &mut push);
    check_tasklets(sdfg, state, &mut push);
    check_library_nodes(state, &mut push);
    check_streams(sdfg, state, &mut push);
    check_nested(sdfg, state, out);
}

fn check_map_scopes(state: &State, push: &mut impl FnMut(Diagnostic)) {
    for node in state.nodes() {
        match &node.kind {
            NodeKind::MapEntry { params, ranges, .. } => {
                if params.len() != ranges.len() {
                    push(Diagnostic::error(
                        "map.pairing",
                        format!("map entry {} has {} params but {} ranges",
                            node.id.0, params.len(), ranges.len()),
                    ).at_node(node.id));
                }
                let exits: Vec<NodeId> = state
                    .nodes()
                    .filter(|n| matches!(n.kind, NodeKind::MapExit { entry } if entry == node.id))
                    .map(|n| n.id)
                    .collect();
                if exits.len() != 1 {
                    push(Diagnostic::error(
                        "map.pairing",
                        format!("map entry {} has {} exits; expected exactly one",
                            node.id.0, exits.len()),
                    ).at_node(node.id));
                } else if state.node(exits[0]).parent != node.parent {
                    push(Diagnostic::error(
                        "map.pairing",
                        format!("map entry {} and exit {} sit in different scopes",
                            node.id.0, exits[0].0),
                    ).at_node(node.id));
                }
                // Passthrough keys must pair up.
                let in_keys: BTreeSet<String> = state
                    .in_edges(node.id)
                    .iter()
                    .filter_map(|e| {
                        passthrough_key(state.edge(*e).dst_conn.as_deref()).map(String::from)
                    })
                    .collect();
                for eid in state.out_edges(node.id) {
                    let conn = state.edge(eid).src_conn.as_deref();
                    match passthrough_key(conn) {
                        Some(key) if in_keys.contains(key) => {}
                        _ => push(Diagnostic::error(
                            "map.passthrough",
                            format!(
                                "map entry {} output connector {:?} has no matching input",
                                node.id.0, conn
                            ),
                        ).at_edge(eid)),
                    }
                }
            }
            NodeKind::MapExit { entry } => {
                if state.try_node(*entry).is_none()
                    || !matches!(state.node(*entry).kind, NodeKind::MapEntry { .. })
                {
                    push(Diagnostic::error(
                        "map.pairing",
                        format!("map exit {} references invalid entry", node.id.0),
                    ).at_node(node.id));
                    continue;
                }
                let out_keys: BTreeSet<String> = state
                    .out_edges(node.id)
                    .iter()
                    .filter_map(|e| {
                        passthrough_key(state.edge(*e).src_conn.as_deref()).map(String::from)
                    })
                    .collect();
                for eid in state.in_edges(node.id) {
                    let conn = state.edge(eid).dst_conn.as_deref();
                    match passthrough_key(conn) {
                        Some(key) if out_keys.contains(key) => {}
                        _ => push(Diagnostic::error(
                            "map.passthrough",
                            format!(
                                "map exit {} input connector {:?} has no matching output",
                                node.id.0, conn
                            ),
                        ).at_edge(eid)),
                    }
                }
            }
            _ => {}
        }
    }
}

fn check_edges(sdfg: &Sdfg, state: &State, push: &mut impl FnMut(Diagnostic)) {
    for (eid, edge) in state.edges() {
        let data = &edge.memlet.data;
        let Some(desc) = sdfg.container(data) else {
            push(Diagnostic::error(
                "edge.undeclared-container",
                format!("memlet references undeclared container `{data}`"),
            ).at_edge(eid));
            continue;
        };
        if edge.memlet.subset.len() != desc.rank() {
            push(Diagnostic::error(
                "edge.subset-rank",
                format!(
                    "memlet subset has {} dimensions but `{data}` has {}",
                    edge.memlet.subset.len(),
                    desc.rank()
                ),
            ).at_edge(eid));
        }
        if edge.memlet.wcr.is_some() && desc.is_stream() {
            push(Diagnostic::error(
                "edge.wcr-on-stream",
                format!("write-conflict resolution is not defined on stream `{data}`"),
            ).at_edge(eid));
        }
        check_edge_scope(state, eid, push);

        // Both endpoints computational (no access node, no passthrough) is
        // not representable as a data movement.
        let computational = |id: NodeId| {
            matches!(
                state.node(id).kind,
                NodeKind::Tasklet(_) | NodeKind::Library(_) | NodeKind::Nested { .. }
            )
        };
        if computational(edge.src) && computational(edge.dst) {
            push(Diagnostic::error(
                "edge.no-access",
                "dataflow between computations must pass through an access node".to_string(),
            ).at_edge(eid));
        }

        // Direct stream access-to-access edges are reserved for the separate
        // reader/writer convention.
        if let (NodeKind::Access { data: src_data }, NodeKind::Access { data: dst_data }) =
            (&state.node(edge.src).kind, &state.node(edge.dst).kind)
        {
            if src_data == dst_data && desc.is_stream() {
                push(Diagnostic::error(
                    "stream.access-to-access",
                    format!("stream `{data}` connects two of its own access nodes"),
                ).at_edge(eid));
            }
        }

        if !edge.memlet.dynamic {
            if let Some(derived) = derived_volume(sdfg, state, eid) {
                if derived != edge.memlet.volume {
                    push(Diagnostic::warning(
                        "edge.volume",
                        format!(
                            "memlet volume `{}` differs from derived `{}` on `{data}`",
                            edge.memlet.volume, derived
                        ),
                    ).at_edge(eid));
                }
            }
        }
    }
}

fn check_edge_scope(state: &State, eid: EdgeId, push: &mut impl FnMut(Diagnostic)) {
    let edge = state.edge(eid);
    let src = state.node(edge.src);
    let dst = state.node(edge.dst);
    let ok = if let NodeKind::MapEntry { .. } = src.kind {
        dst.parent == Some(src.id)
            || matches!(dst.kind, NodeKind::MapExit { entry } if entry == src.id)
    } else if let NodeKind::MapExit { entry } = dst.kind {
        src.parent == Some(entry)
    } else {
        src.parent == dst.parent
    };
    if !ok {
        push(Diagnostic::error(
            "edge.scope",
            format!(
                "edge {} -> {} crosses a map scope boundary without a passthrough",
                src.id.0, dst.id.0
            ),
        ).at_edge(eid));
    }
}

fn check_tasklets(sdfg: &Sdfg, state: &State, push: &mut impl FnMut(Diagnostic)) {
    for node in state.nodes() {
        let NodeKind::Tasklet(t) = &node.kind else {
            continue;
        };
        let in_edges = state.in_edges(node.id);
        let out_edges = state.out_edges(node.id);
        for input in &t.inputs {
            let count = in_edges
                .iter()
                .filter(|e| state.edge(**e).dst_conn.as_deref() == Some(input.name.as_str()))
                .count();
            if count != 1 {
                push(Diagnostic::error(
                    "tasklet.connectors",
                    format!(
                        "input connector `{}` of tasklet `{}` has {count} edges; expected 1",
                        input.name, t.name
                    ),
                ).at_node(node.id));
            }
        }
        for eid in &in_edges {
            let conn = state.edge(*eid).dst_conn.as_deref();
            if !t.inputs.iter().any(|i| Some(i.name.as_str()) == conn) {
                push(Diagnostic::error(
                    "tasklet.connectors",
                    format!("edge into tasklet `{}` names unknown connector {conn:?}", t.name),
                ).at_edge(*eid));
            }
        }
        for output in &t.outputs {
            let assigns = t.body.iter().filter(|a| &a.target == output).count();
            if assigns != 1 {
                push(Diagnostic::error(
                    "tasklet.connectors",
                    format!(
                        "output `{}` of tasklet `{}` has {assigns} assignments; expected 1",
                        output, t.name
                    ),
                ).at_node(node.id));
            }
            let edges = out_edges
                .iter()
                .filter(|e| state.edge(**e).src_conn.as_deref() == Some(output.as_str()))
                .count();
            if edges == 0 {
                push(Diagnostic::error(
                    "tasklet.connectors",
                    format!("output `{}` of tasklet `{}` is not connected", output, t.name),
                ).at_node(node.id));
            }
        }
        for assign in &t.body {
            if !t.outputs.contains(&assign.target) {
                push(Diagnostic::error(
                    "tasklet.connectors",
                    format!(
                        "assignment to `{}` in tasklet `{}` is not a declared output",
                        assign.target, t.name
                    ),
                ).at_node(node.id));
            }
        }

        // Guarded connectors require dynamic memlets.
        for input in &t.inputs {
            if input.guard.is_some() {
                for eid in &in_edges {
                    let e = state.edge(*eid);
                    if e.dst_conn.as_deref() == Some(input.name.as_str()) && !e.memlet.dynamic {
                        push(Diagnostic::error(
                            "edge.guard-dynamic",
                            format!(
                                "guarded input `{}` of `{}` needs a dynamic memlet",
                                input.name, t.name
                            ),
                        ).at_edge(*eid));
                    }
                }
            }
        }
        for assign in &t.body {
            if assign.guard.is_some() {
                for eid in &out_edges {
                    let e = state.edge(*eid);
                    if e.src_conn.as_deref() == Some(assign.target.as_str()) && !e.memlet.dynamic {
                        push(Diagnostic::error(
                            "edge.guard-dynamic",
                            format!(
                                "guarded output `{}` of `{}` needs a dynamic memlet",
                                assign.target, t.name
                            ),
                        ).at_edge(*eid));
                    }
                }
            }
        }

        // Body references must resolve to inputs, enclosing map parameters,
        // symbols, or embedded constant tables.
        let mut visible: BTreeSet<&str> =
            t.inputs.iter().map(|i| i.name.as_str()).collect();
        for sym in &sdfg.symbols {
            visible.insert(sym);
        }
        for entry in state.scope_chain(node.id) {
            if let NodeKind::MapEntry { params, .. } = &state.node(entry).kind {
                for p in params {
                    visible.insert(p);
                }
            }
        }
        let tables: BTreeSet<&str> = t.constants.iter().map(|c| c.name.as_str()).collect();
        let mut exprs: Vec<&super::ValueExpr> = Vec::new();
        for assign in &t.body {
            exprs.push(&assign.value);
            if let Some(g) = &assign.guard {
                exprs.push(g);
            }
        }
        for input in &t.inputs {
            if let Some(g) = &input.guard {
                exprs.push(g);
            }
        }
        for expr in exprs {
            for name in expr.refs() {
                if !visible.contains(name) {
                    push(Diagnostic::error(
                        "tasklet.refs",
                        format!("tasklet `{}` references unbound name `{name}`", t.name),
                    ).at_node(node.id));
                }
            }
            for table in expr.const_refs() {
                if !tables.contains(table) {
                    push(Diagnostic::error(
                        "tasklet.refs",
                        format!("tasklet `{}` references unknown constant table `{table}`", t.name),
                    ).at_node(node.id));
                }
            }
        }
    }
}

fn check_library_nodes(state: &State, push: &mut impl FnMut(Diagnostic)) {
    for node in state.nodes() {
        let NodeKind::Library(lib) = &node.kind else {
            continue;
        };
        let want_in = lib.kind.input_connectors();
        let want_out = lib.kind.output_connectors();
        for conn in &want_in {
            let count = state
                .in_edges(node.id)
                .iter()
                .filter(|e| state.edge(**e).dst_conn.as_deref() == Some(conn.as_str()))
                .count();
            if count != 1 {
                push(Diagnostic::error(
                    "library.connectors",
                    format!(
                        "input `{conn}` of library node `{}` has {count} edges; expected 1",
                        lib.name
                    ),
                ).at_node(node.id));
            }
        }
        for conn in &want_out {
            let count = state
                .out_edges(node.id)
                .iter()
                .filter(|e| state.edge(**e).src_conn.as_deref() == Some(conn.as_str()))
                .count();
            if count == 0 {
                push(Diagnostic::error(
                    "library.connectors",
                    format!("output `{conn}` of library node `{}` is not connected", lib.name),
                ).at_node(node.id));
            }
        }
    }
}

fn check_streams(sdfg: &Sdfg, state: &State, push: &mut impl FnMut(Diagnostic)) {
    // Writer/reader lineages per stream container; two lineages with
    // identical innermost subsets violate single-producer/single-consumer.
    let mut streams: BTreeMap<&str, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for node in state.nodes() {
        let NodeKind::Access { data } = &node.kind else {
            continue;
        };
        let Some(desc) = sdfg.container(data) else {
            continue;
        };
        if !desc.is_stream() {
            continue;
        }
        let entry = streams.entry(data.as_str()).or_default();
        for path in trace_writes(state, node.id) {
            entry.0.push(subset_signature(&path.innermost));
        }
        for path in trace_reads(state, node.id) {
            entry.1.push(subset_signature(&path.innermost));
        }
    }
    for (name, (writes, reads)) in streams {
        for (kind, rule, sigs) in [
            ("producer", "stream.single-producer", writes),
            ("consumer", "stream.single-consumer", reads),
        ] {
            let mut seen = BTreeSet::new();
            for sig in &sigs {
                if !seen.insert(sig.clone()) {
                    push(Diagnostic::error(
                        rule,
                        format!(
                            "stream `{name}` has more than one {kind} for element [{sig}]"
                        ),
                    ));
                    break;
                }
            }
        }
    }
}

fn subset_signature(memlet: &super::Memlet) -> String {
    memlet
        .subset
        .iter()
        .map(|r| format!("{}:{}:{}", r.begin, r.end, r.stride))
        .collect::<Vec<_>>()
        .join(",")
}

fn check_nested(_sdfg: &Sdfg, state: &State, out: &mut Vec<Diagnostic>) {
    for node in state.nodes() {
        let NodeKind::Nested {
            sdfg: inner,
            inputs,
            outputs,
            ..
        } = &node.kind
        else {
            continue;
        };
        for (conn, container) in inputs.iter().chain(outputs.iter()) {
            if inner.container(container).is_none() {
                out.push(
                    Diagnostic::error(
                        "nested.connectors",
                        format!(
                            "nested graph connector `{conn}` maps to unknown container `{container}`"
                        ),
                    )
                    .at_state(&state.name)
                    .at_node(node.id),
                );
            }
        }
        for mut diag in validate(inner) {
            diag.state = Some(format!(
                "{}/{}",
                state.name,
                diag.state.unwrap_or_else(|| inner.name.clone())
            ));
            out.push(diag);
        }
    }
}
