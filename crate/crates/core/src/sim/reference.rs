//! The sequential reference interpreter: executes states along control flow,
//! nodes in topological order, maps as sequential loops, streams as
//! unbounded queues. Popping an empty stream is a hard error here; graphs
//! that need blocking semantics belong to the concurrent engine.

use std::collections::{BTreeMap, BTreeSet};

use super::schedule::{build_schedule, CopyOp, Step, TaskOp};
use super::{
    eval_value, point_indices, stream_instance, EvalCtx, SimError, TensorStore, Value,
};
use crate::analysis::connected_components;
use crate::ir::{ContainerKind, NodeId, NodeKind, Sdfg, State, StateId, ValueExpr};
use crate::symbolic::SymBinding;

const TRANSITION_LIMIT: u64 = 1_000_000;

/// Runs the whole graph under `binding`, starting from zero-initialized
/// storage overlaid with `inputs`. Returns the full final store; use
/// [`TensorStore::externals`] for the non-transient interface.
pub fn run_reference(
    sdfg: &Sdfg,
    inputs: &TensorStore,
    binding: &SymBinding,
) -> Result<TensorStore, SimError> {
    let mut store = TensorStore::allocate(sdfg, binding)?;
    store.load_inputs(inputs)?;
    let mut symbols = binding.clone();
    if sdfg.states.is_empty() {
        return Ok(store);
    }
    let mut current = sdfg.start;
    let mut transitions = 0u64;
    loop {
        execute_state(sdfg, current, &mut store, &symbols)?;
        let mut next = None;
        for edge in sdfg.out_inter_edges(current) {
            let take = match &edge.condition {
                None => true,
                Some(cond) => eval_value(cond, &EvalCtx::bare(&symbols))?
                    .as_int()
                    .map(|v| v != 0)
                    .unwrap_or(false),
            };
            if take {
                for (name, expr) in &edge.assignments {
                    let value = expr.evaluate(&symbols)?;
                    symbols.set(name.clone(), value);
                }
                next = Some(edge.dst);
                break;
            }
        }
        match next {
            Some(state) => current = state,
            None => return Ok(store),
        }
        transitions += 1;
        if transitions > TRANSITION_LIMIT {
            return Err(SimError::TransitionLimit);
        }
    }
}

/// Executes one state: weakly connected components run to completion in
/// stream producer-before-consumer order.
pub(crate) fn execute_state(
    sdfg: &Sdfg,
    state_id: StateId,
    store: &mut TensorStore,
    symbols: &SymBinding,
) -> Result<(), SimError> {
    let state = sdfg.state(state_id);
    let pes = connected_components(sdfg, state_id);
    let order = component_order(sdfg, state, &pes);
    for idx in order {
        let members: BTreeSet<NodeId> = pes.components[idx].nodes.iter().copied().collect();
        let steps = build_schedule(sdfg, state, Some(&members))?;
        let mut binding = symbols.clone();
        exec_steps(sdfg, state, &steps, store, &mut binding)?;
    }
    Ok(())
}

/// Orders components so that stream producers run before consumers (at
/// container granularity; self-loops ignored). Falls back to natural order
/// on cycles, where pop-on-empty will surface the issue.
fn component_order(sdfg: &Sdfg, state: &State, pes: &crate::analysis::PeSet) -> Vec<usize> {
    let n = pes.components.len();
    let mut pushes: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    let mut pops: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for (i, comp) in pes.components.iter().enumerate() {
        for id in &comp.nodes {
            if let NodeKind::Access { data } = &state.node(*id).kind {
                if let Some(desc) = sdfg.container(data) {
                    if desc.kind == ContainerKind::Stream {
                        if !state.in_edges(*id).is_empty() {
                            pushes[i].insert(data.as_str());
                        }
                        if !state.out_edges(*id).is_empty() {
                            pops[i].insert(data.as_str());
                        }
                    }
                }
            }
        }
    }
    let mut indegree = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in 0..n {
        for b in 0..n {
            if a != b && pushes[a].intersection(&pops[b]).next().is_some() {
                succs[a].push(b);
                indegree[b] += 1;
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(next);
        for &s in &succs[next] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() != n {
        return (0..n).collect();
    }
    order
}

pub(crate) fn exec_steps(
    sdfg: &Sdfg,
    state: &State,
    steps: &[Step],
    store: &mut TensorStore,
    binding: &mut SymBinding,
) -> Result<(), SimError> {
    for step in steps {
        match step {
            Step::Loop {
                params,
                ranges,
                body,
                ..
            } => exec_loop(sdfg, state, params, ranges, body, store, binding, 0)?,
            Step::Task(op) => exec_task(sdfg, op, store, binding)?,
            Step::Copy(op) => exec_copy(sdfg, op, store, binding)?,
            Step::Library(node) => {
                super::library_exec::execute(sdfg, state, *node, store, binding)?
            }
            Step::Nested(node) => exec_nested(sdfg, state, *node, store, binding)?,
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn exec_loop(
    sdfg: &Sdfg,
    state: &State,
    params: &[String],
    ranges: &[crate::ir::RangeExpr],
    body: &[Step],
    store: &mut TensorStore,
    binding: &mut SymBinding,
    level: usize,
) -> Result<(), SimError> {
    if level == params.len() {
        return exec_steps(sdfg, state, body, store, binding);
    }
    let range = &ranges[level];
    let begin = range.begin.evaluate(binding)?;
    let end = range.end.evaluate(binding)?;
    let stride = range.stride.evaluate(binding)?;
    if stride <= 0 {
        return Err(SimError::Graph(format!(
            "map range stride must be positive, got {stride}"
        )));
    }
    let mut value = begin;
    while value <= end {
        let old = binding.remove(&params[level]);
        binding.set(params[level].clone(), value);
        let result = exec_loop(sdfg, state, params, ranges, body, store, binding, level + 1);
        binding.remove(&params[level]);
        if let Some(old) = old {
            binding.set(params[level].clone(), old);
        }
        result?;
        value += stride;
    }
    Ok(())
}

/// Evaluates a guard (over parameters and symbols only).
pub(crate) fn guard_passes(
    guard: &Option<ValueExpr>,
    binding: &SymBinding,
) -> Result<bool, SimError> {
    match guard {
        None => Ok(true),
        Some(g) => Ok(eval_value(g, &EvalCtx::bare(binding))?
            .as_int()
            .map(|v| v != 0)
            .unwrap_or(false)),
    }
}

fn exec_task(
    sdfg: &Sdfg,
    op: &TaskOp,
    store: &mut TensorStore,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let mut connectors: BTreeMap<String, Value> = BTreeMap::new();
    for input in &op.inputs {
        if !guard_passes(&input.guard, binding)? {
            connectors.insert(input.connector.clone(), Value::zero_of(input.elem));
            continue;
        }
        let value = if input.stream {
            let desc = sdfg
                .container(&input.data)
                .ok_or_else(|| SimError::UnknownContainer(input.data.clone()))?;
            let instance = stream_instance(desc, &input.subset, binding)?;
            store
                .queue(&input.data, instance)?
                .pop_front()
                .ok_or_else(|| SimError::PopEmpty(input.data.clone()))?
        } else {
            let idx = point_indices(&input.data, &input.subset, binding)?;
            store.tensor(&input.data)?.read(&input.data, &idx)?
        };
        connectors.insert(input.connector.clone(), value);
    }
    let values = compute_assigns(op, connectors, binding)?;
    for out in &op.outputs {
        let Some(value) = values.get(&out.connector) else {
            continue;
        };
        let Some(value) = value else {
            continue; // guard suppressed the write
        };
        if out.stream {
            let desc = sdfg
                .container(&out.data)
                .ok_or_else(|| SimError::UnknownContainer(out.data.clone()))?;
            let instance = stream_instance(desc, &out.subset, binding)?;
            store.queue(&out.data, instance)?.push_back(value.clone());
        } else {
            let idx = point_indices(&out.data, &out.subset, binding)?;
            store
                .tensor_mut(&out.data)?
                .write(&out.data, &idx, value, out.wcr)?;
        }
    }
    Ok(())
}

/// Evaluates every assignment of a tasklet once. Guard-suppressed targets
/// map to `None`.
pub(crate) fn compute_assigns(
    op: &TaskOp,
    connectors: BTreeMap<String, Value>,
    binding: &SymBinding,
) -> Result<BTreeMap<String, Option<Value>>, SimError> {
    let ctx = EvalCtx {
        connectors,
        binding,
        constants: &op.constants,
        f32_literals: op.f32_literals,
    };
    let mut out = BTreeMap::new();
    for assign in &op.body {
        let fires = match &assign.guard {
            None => true,
            Some(g) => eval_value(g, &ctx)?.as_int().map(|v| v != 0).unwrap_or(false),
        };
        let value = if fires {
            Some(eval_value(&assign.value, &ctx)?)
        } else {
            None
        };
        out.insert(assign.target.clone(), value);
    }
    Ok(out)
}

fn exec_copy(
    sdfg: &Sdfg,
    op: &CopyOp,
    store: &mut TensorStore,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let src_desc = sdfg
        .container(&op.src)
        .ok_or_else(|| SimError::UnknownContainer(op.src.clone()))?;
    let dst_desc = sdfg
        .container(&op.dst)
        .ok_or_else(|| SimError::UnknownContainer(op.dst.clone()))?;
    match (src_desc.kind, dst_desc.kind) {
        (ContainerKind::Stream, ContainerKind::Stream) => Err(SimError::Graph(
            "stream-to-stream copies are not defined".to_string(),
        )),
        (ContainerKind::Stream, _) => {
            let count = store.tensor(&op.dst)?.element_count();
            let mut values = Vec::with_capacity(count as usize);
            {
                let queue = store.queue(&op.src, 0)?;
                for _ in 0..count {
                    values.push(
                        queue
                            .pop_front()
                            .ok_or_else(|| SimError::PopEmpty(op.src.clone()))?,
                    );
                }
            }
            let tensor = store.tensor_mut(&op.dst)?;
            let shape = tensor.shape.clone();
            for (flat, value) in values.iter().enumerate() {
                let idx = unflatten(flat as u64, &shape);
                tensor.write(&op.dst, &idx, value, None)?;
            }
            Ok(())
        }
        (_, ContainerKind::Stream) => {
            let tensor = store.tensor(&op.src)?.clone();
            let shape = tensor.shape.clone();
            let queue = store.queue(&op.dst, 0)?;
            for flat in 0..tensor.element_count() {
                let idx = unflatten(flat, &shape);
                queue.push_back(tensor.read(&op.src, &idx)?);
            }
            Ok(())
        }
        _ => {
            let src = store.tensor(&op.src)?;
            let src_data = src.data.clone();
            let dst = store.tensor_mut(&op.dst)?;
            if dst.data.len() != src_data.len() {
                return Err(SimError::ShapeMismatch {
                    name: op.dst.clone(),
                    got: src_data.len(),
                    want: dst.data.len(),
                });
            }
            let _ = binding;
            dst.data = src_data;
            Ok(())
        }
    }
}

pub(crate) fn unflatten(flat: u64, shape: &[u64]) -> Vec<i64> {
    let mut idx = vec![0i64; shape.len()];
    let mut rem = flat;
    for d in (0..shape.len()).rev() {
        idx[d] = (rem % shape[d]) as i64;
        rem /= shape[d];
    }
    idx
}

fn exec_nested(
    sdfg: &Sdfg,
    state: &State,
    node: NodeId,
    store: &mut TensorStore,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let NodeKind::Nested {
        sdfg: inner,
        symbol_map,
        inputs,
        outputs,
    } = &state.node(node).kind
    else {
        return Err(SimError::Graph("expected nested graph node".into()));
    };
    let mut inner_binding = SymBinding::new();
    for (name, expr) in symbol_map {
        inner_binding.set(name.clone(), expr.evaluate(binding)?);
    }
    // Bind inner containers to the outer data by full copies.
    let mut inner_inputs = TensorStore::new();
    for eid in state.in_edges(node) {
        let edge = state.edge(eid);
        let Some(conn) = &edge.dst_conn else { continue };
        let Some(inner_name) = inputs.get(conn) else {
            continue;
        };
        let outer = store.tensor(&edge.memlet.data)?.clone();
        inner_inputs.insert(inner_name.clone(), outer);
    }
    let result = run_reference(inner, &inner_inputs, &inner_binding)?;
    for eid in state.out_edges(node) {
        let edge = state.edge(eid);
        let Some(conn) = &edge.src_conn else { continue };
        let Some(inner_name) = outputs.get(conn) else {
            continue;
        };
        let value = result.tensor(inner_name)?.clone();
        let outer = store.tensor_mut(&edge.memlet.data)?;
        outer.data = value.data;
    }
    Ok(())
}
