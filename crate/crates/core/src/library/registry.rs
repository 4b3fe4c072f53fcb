//! The expansion registry: lowering rules from library nodes to concrete
//! subgraphs, selected by applicability and priority (target-specialized
//! rules outrank generic ones).

use indexmap::IndexMap;

use super::{LibraryNode, LibraryNodeKind, TargetCapabilities};
use crate::ir::{path, validate, EdgeId, NodeId, NodeKind, Sdfg, Severity, StateId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("no applicable expansion for `{kind}` node `{node}` on target `{target}`")]
    NoApplicable {
        kind: String,
        node: String,
        target: String,
    },
    #[error("unknown expansion id `{0}`")]
    UnknownExpansion(String),
    #[error("expansion `{id}` is not applicable to node `{node}`")]
    NotApplicable { id: String, node: String },
    #[error("expansion cycle detected; chain tail: {0:?}")]
    Cycle(Vec<String>),
    #[error("expansion `{id}` produced an invalid graph: {first}")]
    InvalidResult { id: String, first: String },
    #[error("expansion internal error: {0}")]
    Internal(String),
}

/// A registered lowering rule.
pub struct ExpansionInfo {
    pub id: &'static str,
    /// Library node kind this rule applies to.
    pub kind: &'static str,
    /// Higher priority wins among applicable rules.
    pub priority: i32,
    pub applicable: fn(&Sdfg, StateId, NodeId, &TargetCapabilities) -> bool,
    pub lower: fn(&mut Sdfg, StateId, NodeId, &TargetCapabilities) -> Result<(), ExpandError>,
}

/// Boundary of a library node collected before replacement: one incoming
/// edge per input connector, and the outgoing edges per output connector.
pub(crate) struct Site {
    pub node: NodeId,
    pub lib: LibraryNode,
    pub parent: Option<NodeId>,
    pub inputs: IndexMap<String, EdgeId>,
    pub outputs: IndexMap<String, Vec<EdgeId>>,
}

impl Site {
    pub(crate) fn collect(sdfg: &Sdfg, state: StateId, node: NodeId) -> Result<Site, ExpandError> {
        let st = sdfg.state(state);
        let lib = match &st.node(node).kind {
            NodeKind::Library(lib) => lib.clone(),
            _ => return Err(ExpandError::Internal("site is not a library node".into())),
        };
        let mut inputs = IndexMap::new();
        for conn in lib.kind.input_connectors() {
            let edge = st
                .in_edges(node)
                .into_iter()
                .find(|e| st.edge(*e).dst_conn.as_deref() == Some(conn.as_str()))
                .ok_or_else(|| {
                    ExpandError::Internal(format!(
                        "library node `{}` input `{conn}` is unconnected",
                        lib.name
                    ))
                })?;
            inputs.insert(conn, edge);
        }
        let mut outputs = IndexMap::new();
        for conn in lib.kind.output_connectors() {
            let edges: Vec<EdgeId> = st
                .out_edges(node)
                .into_iter()
                .filter(|e| st.edge(*e).src_conn.as_deref() == Some(conn.as_str()))
                .collect();
            if edges.is_empty() {
                return Err(ExpandError::Internal(format!(
                    "library node `{}` output `{conn}` is unconnected",
                    lib.name
                )));
            }
            outputs.insert(conn, edges);
        }
        Ok(Site {
            node,
            lib,
            parent: st.node(node).parent,
            inputs,
            outputs,
        })
    }

    /// The access node feeding an input connector.
    pub(crate) fn input_access(&self, sdfg: &Sdfg, state: StateId, conn: &str) -> Result<NodeId, ExpandError> {
        let edge = self.inputs.get(conn).ok_or_else(|| {
            ExpandError::Internal(format!("missing input connector `{conn}`"))
        })?;
        let src = sdfg.state(state).edge(*edge).src;
        match sdfg.state(state).node(src).kind {
            NodeKind::Access { .. } => Ok(src),
            _ => Err(ExpandError::Internal(format!(
                "input `{conn}` of `{}` is not fed by an access node",
                self.lib.name
            ))),
        }
    }

    /// The access node consuming an output connector (first edge).
    pub(crate) fn output_access(&self, sdfg: &Sdfg, state: StateId, conn: &str) -> Result<NodeId, ExpandError> {
        let edges = self.outputs.get(conn).ok_or_else(|| {
            ExpandError::Internal(format!("missing output connector `{conn}`"))
        })?;
        let dst = sdfg.state(state).edge(edges[0]).dst;
        match sdfg.state(state).node(dst).kind {
            NodeKind::Access { .. } => Ok(dst),
            _ => Err(ExpandError::Internal(format!(
                "output `{conn}` of `{}` is not consumed by an access node",
                self.lib.name
            ))),
        }
    }

    /// Container name behind an input connector.
    pub(crate) fn input_data(&self, sdfg: &Sdfg, state: StateId, conn: &str) -> String {
        let edge = self.inputs[conn];
        sdfg.state(state).edge(edge).memlet.data.clone()
    }

    pub(crate) fn output_data(&self, sdfg: &Sdfg, state: StateId, conn: &str) -> String {
        let edge = self.outputs[conn][0];
        sdfg.state(state).edge(edge).memlet.data.clone()
    }

    /// Removes the library node and its incident edges, leaving the
    /// neighboring access nodes in place for the replacement subgraph.
    pub(crate) fn remove(&self, sdfg: &mut Sdfg, state: StateId) {
        sdfg.state_mut(state).remove_node(self.node);
    }
}

/// All registered expansions for a kind, highest priority first.
pub fn expansions_for(kind: &str) -> Vec<&'static ExpansionInfo> {
    let mut rules: Vec<&'static ExpansionInfo> =
        REGISTRY.iter().filter(|r| r.kind == kind).collect();
    rules.sort_by_key(|r| -r.priority);
    rules
}

fn library_nodes(sdfg: &Sdfg) -> Vec<(StateId, NodeId, String)> {
    let mut out = Vec::new();
    for state in sdfg.state_ids() {
        for node in sdfg.state(state).nodes() {
            if let NodeKind::Library(lib) = &node.kind {
                out.push((state, node.id, lib.kind.kind_name().to_string()));
            }
        }
    }
    out
}

/// Expands one library node in place. With `expansion_id` given, that rule is
/// used (if applicable); otherwise the highest-priority applicable rule wins.
/// Returns the id of the rule applied.
pub fn expand_node(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    expansion_id: Option<&str>,
    target: &TargetCapabilities,
) -> Result<&'static str, ExpandError> {
    let (kind_name, node_name) = match &sdfg.state(state).node(node).kind {
        NodeKind::Library(lib) => (lib.kind.kind_name(), lib.name.clone()),
        _ => return Err(ExpandError::Internal("not a library node".into())),
    };
    let rule = match expansion_id {
        Some(id) => {
            let rule = REGISTRY
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| ExpandError::UnknownExpansion(id.to_string()))?;
            if !(rule.applicable)(sdfg, state, node, target) {
                return Err(ExpandError::NotApplicable {
                    id: id.to_string(),
                    node: node_name,
                });
            }
            rule
        }
        None => expansions_for(kind_name)
            .into_iter()
            .find(|r| (r.applicable)(sdfg, state, node, target))
            .ok_or_else(|| ExpandError::NoApplicable {
                kind: kind_name.to_string(),
                node: node_name.clone(),
                target: target.name.clone(),
            })?,
    };
    (rule.lower)(sdfg, state, node, target)?;
    path::autovolume(sdfg, state);
    let diags = validate(sdfg);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        let first = diags
            .iter()
            .find(|d| d.severity == Severity::Error)
            .unwrap()
            .to_string();
        return Err(ExpandError::InvalidResult {
            id: rule.id.to_string(),
            first,
        });
    }
    Ok(rule.id)
}

/// Expands library nodes to a fixpoint: afterwards none remain. Expansion
/// picks target-specialized rules over generic ones deterministically.
/// Returns `(node name, expansion id)` in application order.
pub fn expand_all(
    sdfg: &mut Sdfg,
    target: &TargetCapabilities,
) -> Result<Vec<(String, String)>, ExpandError> {
    let mut applied = Vec::new();
    let mut trace: Vec<String> = Vec::new();
    loop {
        let nodes = library_nodes(sdfg);
        let Some((state, node, _)) = nodes.first().cloned() else {
            return Ok(applied);
        };
        let fingerprint = match &sdfg.state(state).node(node).kind {
            NodeKind::Library(lib) => serde_json::to_string(&lib.kind).unwrap(),
            _ => unreachable!(),
        };
        let repeats = trace.iter().filter(|f| **f == fingerprint).count();
        if repeats > 8 {
            let mut tail: Vec<String> = trace.iter().rev().take(4).cloned().collect();
            tail.reverse();
            tail.push(fingerprint);
            return Err(ExpandError::Cycle(tail));
        }
        trace.push(fingerprint);
        let node_name = match &sdfg.state(state).node(node).kind {
            NodeKind::Library(lib) => lib.name.clone(),
            _ => unreachable!(),
        };
        let id = expand_node(sdfg, state, node, None, target)?;
        applied.push((node_name, id.to_string()));
    }
}

static REGISTRY: &[ExpansionInfo] = &[
    ExpansionInfo {
        id: "matmul.dispatch",
        kind: "matmul",
        priority: 0,
        applicable: super::blas::matmul_applicable,
        lower: super::blas::matmul_dispatch,
    },
    ExpansionInfo {
        id: "axpy.generic",
        kind: "axpy",
        priority: 0,
        applicable: |_, _, _, _| true,
        lower: super::blas::axpy_generic,
    },
    ExpansionInfo {
        id: "dot.native_accumulate",
        kind: "dot",
        priority: 10,
        applicable: super::blas::dot_native_applicable,
        lower: super::blas::dot_native,
    },
    ExpansionInfo {
        id: "dot.partial_sums",
        kind: "dot",
        priority: 5,
        applicable: super::blas::dot_partial_applicable,
        lower: super::blas::dot_partial_sums,
    },
    ExpansionInfo {
        id: "gemv.tiled",
        kind: "gemv",
        priority: 0,
        applicable: super::blas::gemv_applicable,
        lower: super::blas::gemv_tiled,
    },
    ExpansionInfo {
        id: "ger.tiled",
        kind: "ger",
        priority: 0,
        applicable: super::blas::ger_applicable,
        lower: super::blas::ger_tiled,
    },
    ExpansionInfo {
        id: "gemm.systolic",
        kind: "gemm",
        priority: 10,
        applicable: super::systolic::gemm_systolic_applicable,
        lower: super::systolic::gemm_systolic_lower,
    },
    ExpansionInfo {
        id: "gemm.naive",
        kind: "gemm",
        priority: 0,
        applicable: super::blas::gemm_naive_applicable,
        lower: super::blas::gemm_naive,
    },
    ExpansionInfo {
        id: "stencil.shift_register",
        kind: "stencil",
        priority: 10,
        applicable: super::stencil_expand::shift_register_applicable,
        lower: super::stencil_expand::shift_register_lower,
    },
    ExpansionInfo {
        id: "stencil.explicit_buffers",
        kind: "stencil",
        priority: 0,
        applicable: super::stencil_expand::explicit_buffers_applicable,
        lower: super::stencil_expand::explicit_buffers_lower,
    },
];

/// Convenience: the attribute fingerprint check for tests.
pub fn library_node_count(sdfg: &Sdfg) -> usize {
    library_nodes(sdfg).len()
}

// Re-exported for kind-specific attribute access in expansion modules.
pub(crate) fn lib_kind(sdfg: &Sdfg, state: StateId, node: NodeId) -> Option<LibraryNodeKind> {
    match &sdfg.state(state).node(node).kind {
        NodeKind::Library(lib) => Some(lib.kind.clone()),
        _ => None,
    }
}
