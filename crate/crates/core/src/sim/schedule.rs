//! Lowering of a state's dataflow graph into an executable schedule tree:
//! map scopes become loops, tasklets become operations with resolved
//! input/output bindings. Shared by the reference interpreter and the
//! concurrent simulator.

use std::collections::BTreeSet;

use crate::ir::{
    Assign, ConstTable, ContainerKind, ElementType, MapSchedule, NodeId, NodeKind, RangeExpr,
    ScalarType, Sdfg, State, TaskletInput, ValueExpr, Wcr,
};

use super::SimError;

#[derive(Debug, Clone)]
pub(crate) enum Step {
    Loop {
        params: Vec<String>,
        ranges: Vec<RangeExpr>,
        #[allow(dead_code)]
        schedule: MapSchedule,
        body: Vec<Step>,
    },
    Task(TaskOp),
    Copy(CopyOp),
    Library(NodeId),
    Nested(NodeId),
}

#[derive(Debug, Clone)]
pub(crate) struct InBind {
    pub connector: String,
    pub data: String,
    pub subset: Vec<RangeExpr>,
    pub stream: bool,
    pub elem: ElementType,
    pub guard: Option<ValueExpr>,
}

#[derive(Debug, Clone)]
pub(crate) struct OutBind {
    pub connector: String,
    pub data: String,
    pub subset: Vec<RangeExpr>,
    pub stream: bool,
    pub wcr: Option<Wcr>,
}

#[derive(Debug, Clone)]
pub(crate) struct TaskOp {
    #[allow(dead_code)]
    pub node: NodeId,
    pub name: String,
    pub inputs: Vec<InBind>,
    pub body: Vec<Assign>,
    pub outputs: Vec<OutBind>,
    pub constants: Vec<ConstTable>,
    pub f32_literals: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct CopyOp {
    pub src: String,
    pub dst: String,
}

/// Builds the schedule for the nodes of `state` whose ids are in `filter`
/// (or all nodes when `None`), at top scope.
pub(crate) fn build_schedule(
    sdfg: &Sdfg,
    state: &State,
    filter: Option<&BTreeSet<NodeId>>,
) -> Result<Vec<Step>, SimError> {
    let order = state
        .topo_order()
        .map_err(|cycle| SimError::Graph(format!("dataflow cycle through {cycle:?}")))?;
    build_scope(sdfg, state, &order, filter, None)
}

fn build_scope(
    sdfg: &Sdfg,
    state: &State,
    order: &[NodeId],
    filter: Option<&BTreeSet<NodeId>>,
    scope: Option<NodeId>,
) -> Result<Vec<Step>, SimError> {
    let mut steps = Vec::new();
    for &id in order {
        if let Some(f) = filter {
            if !f.contains(&id) {
                continue;
            }
        }
        let node = state.node(id);
        if node.parent != scope {
            continue;
        }
        match &node.kind {
            NodeKind::MapEntry {
                params,
                ranges,
                schedule,
            } => {
                let body = build_scope(sdfg, state, order, filter, Some(id))?;
                steps.push(Step::Loop {
                    params: params.clone(),
                    ranges: ranges.clone(),
                    schedule: *schedule,
                    body,
                });
            }
            NodeKind::MapExit { .. } => {}
            NodeKind::Access { .. } => {
                // Direct access-to-access edges are copies.
                for eid in state.out_edges(id) {
                    let edge = state.edge(eid);
                    if let Some(f) = filter {
                        if !f.contains(&edge.dst) {
                            continue;
                        }
                    }
                    if let NodeKind::Access { data: dst } = &state.node(edge.dst).kind {
                        let NodeKind::Access { data: src } = &node.kind else {
                            unreachable!()
                        };
                        steps.push(Step::Copy(CopyOp {
                            src: src.clone(),
                            dst: dst.clone(),
                        }));
                    }
                }
            }
            NodeKind::Tasklet(t) => steps.push(Step::Task(lower_tasklet(sdfg, state, id, t)?)),
            NodeKind::Library(_) => steps.push(Step::Library(id)),
            NodeKind::Nested { .. } => steps.push(Step::Nested(id)),
        }
    }
    Ok(steps)
}

fn container_kind(sdfg: &Sdfg, data: &str) -> Result<(bool, ElementType), SimError> {
    let desc = sdfg
        .container(data)
        .ok_or_else(|| SimError::UnknownContainer(data.to_string()))?;
    Ok((desc.kind == ContainerKind::Stream, desc.element))
}

fn lower_tasklet(
    sdfg: &Sdfg,
    state: &State,
    id: NodeId,
    t: &crate::ir::Tasklet,
) -> Result<TaskOp, SimError> {
    let mut inputs = Vec::new();
    let in_edges = state.in_edges(id);
    for TaskletInput { name, guard } in &t.inputs {
        let eid = in_edges
            .iter()
            .find(|e| state.edge(**e).dst_conn.as_deref() == Some(name.as_str()))
            .ok_or_else(|| SimError::Graph(format!("input `{name}` of `{}` unconnected", t.name)))?;
        let memlet = &state.edge(*eid).memlet;
        let (stream, elem) = container_kind(sdfg, &memlet.data)?;
        inputs.push(InBind {
            connector: name.clone(),
            data: memlet.data.clone(),
            subset: memlet.subset.clone(),
            stream,
            elem,
            guard: guard.clone(),
        });
    }
    let mut outputs = Vec::new();
    let out_edges = state.out_edges(id);
    for assign in &t.body {
        for eid in &out_edges {
            let edge = state.edge(*eid);
            if edge.src_conn.as_deref() != Some(assign.target.as_str()) {
                continue;
            }
            let (stream, _) = container_kind(sdfg, &edge.memlet.data)?;
            outputs.push(OutBind {
                connector: assign.target.clone(),
                data: edge.memlet.data.clone(),
                subset: edge.memlet.subset.clone(),
                stream,
                wcr: edge.memlet.wcr,
            });
        }
    }
    // Literal float width: prefer f64 if any incident container is f64.
    let mut any_f32 = false;
    let mut any_f64 = false;
    for data in inputs
        .iter()
        .map(|b| &b.data)
        .chain(outputs.iter().map(|b| &b.data))
    {
        match container_kind(sdfg, data)?.1.base() {
            ScalarType::F32 => any_f32 = true,
            ScalarType::F64 => any_f64 = true,
            _ => {}
        }
    }
    Ok(TaskOp {
        node: id,
        name: t.name.clone(),
        inputs,
        body: t.body.clone(),
        outputs,
        constants: t.constants.clone(),
        f32_literals: any_f32 && !any_f64,
    })
}
