//! Folding a never-written input container into compile-time constants: its
//! access nodes and memlets disappear, and reads become lookups into tables
//! embedded in the consuming tasklets. Scalar containers fold into literals.

use super::{check_valid, PassError, PassReport};
use crate::ir::path::trace_reads;
use crate::ir::{ConstData, ConstTable, NodeKind, Sdfg, ValueExpr};
use crate::sim::{Tensor, TensorData};

pub fn input_to_constant(
    sdfg: &mut Sdfg,
    container: &str,
    values: &Tensor,
) -> Result<PassReport, PassError> {
    const PASS: &str = "input-to-constant";
    let fail = |message: String| PassError::Failed {
        pass: PASS.to_string(),
        message,
    };
    let desc = sdfg
        .container(container)
        .ok_or_else(|| fail(format!("unknown container `{container}`")))?
        .clone();
    // The parameter array must never be written.
    for state in &sdfg.states {
        for node in state.nodes() {
            if matches!(&node.kind, NodeKind::Access { data } if data == container)
                && !state.in_edges(node.id).is_empty()
            {
                return Err(fail(format!("container `{container}` is written")));
            }
        }
    }
    // Shape check against literal dimensions.
    if desc.shape.len() != values.shape.len() {
        return Err(fail(format!(
            "value tensor has rank {}, container has rank {}",
            values.shape.len(),
            desc.shape.len()
        )));
    }
    for (dim, got) in desc.shape.iter().zip(&values.shape) {
        if let Some(want) = dim.as_int() {
            if want != *got as i128 {
                return Err(fail(format!(
                    "value tensor dimension {got} does not match container dimension {want}"
                )));
            }
        }
    }

    let table_data = match &values.data {
        TensorData::F32(v) => ConstData::Float(v.iter().map(|x| *x as f64).collect()),
        TensorData::F64(v) => ConstData::Float(v.clone()),
        TensorData::I32(v) => ConstData::Int(v.iter().map(|x| *x as i64).collect()),
        TensorData::I64(v) => ConstData::Int(v.clone()),
    };
    let scalar_literal = if values.shape.is_empty() || values.data.len() == 1 {
        Some(match &table_data {
            ConstData::Float(v) => ValueExpr::Float(v[0]),
            ConstData::Int(v) => ValueExpr::Int(v[0] as i128),
        })
    } else {
        None
    };

    let mut sites = Vec::new();
    for state_id in sdfg.state_ids().collect::<Vec<_>>() {
        let state = sdfg.state(state_id);
        let accesses: Vec<crate::ir::NodeId> = state
            .nodes()
            .filter(|n| matches!(&n.kind, NodeKind::Access { data } if data == container))
            .map(|n| n.id)
            .collect();
        if accesses.is_empty() {
            continue;
        }
        let mut rewrites = Vec::new();
        for access in &accesses {
            for path in trace_reads(state, *access) {
                if !matches!(state.node(path.leaf).kind, NodeKind::Tasklet(_)) {
                    return Err(fail(format!(
                        "container `{container}` feeds a non-tasklet consumer"
                    )));
                }
                rewrites.push(path);
            }
        }
        let state = sdfg.state_mut(state_id);
        let state_name = state.name.clone();
        for path in &rewrites {
            let conn = path.leaf_conn.clone().unwrap_or_default();
            // Index expressions come from the innermost memlet subset.
            let replacement = match &scalar_literal {
                Some(lit) => lit.clone(),
                None => {
                    let idx: Vec<ValueExpr> = path
                        .innermost
                        .subset
                        .iter()
                        .map(|r| {
                            crate::ir::parse_value_expr(&r.begin.to_string())
                                .expect("printed index expressions re-parse")
                        })
                        .collect();
                    ValueExpr::ConstRef(container.to_string(), idx)
                }
            };
            for eid in &path.edges {
                state.remove_edge(*eid);
            }
            let NodeKind::Tasklet(t) = &mut state.node_mut(path.leaf).kind else {
                unreachable!("checked above");
            };
            t.inputs.retain(|i| i.name != conn);
            for assign in &mut t.body {
                assign.value = assign
                    .value
                    .map_refs(&|name| (name == conn).then(|| replacement.clone()));
                if let Some(g) = &mut assign.guard {
                    *g = g.map_refs(&|name| (name == conn).then(|| replacement.clone()));
                }
            }
            if scalar_literal.is_none() && !t.constants.iter().any(|c| c.name == container) {
                t.constants.push(ConstTable {
                    name: container.to_string(),
                    shape: values.shape.clone(),
                    data: table_data.clone(),
                });
            }
            sites.push(format!(
                "{state_name}: read of {container} folded into `{}`",
                t.name
            ));
        }
        for access in accesses {
            if state.in_edges(access).is_empty() && state.out_edges(access).is_empty() {
                state.remove_node(access);
            }
        }
        crate::ir::path::autovolume(sdfg, state_id);
    }
    // The container leaves the external interface entirely.
    sdfg.containers.shift_remove(container);
    check_valid(PASS, sdfg)?;
    if sites.is_empty() {
        sites.push(format!("{container}: removed (never read)"));
    }
    Ok(PassReport::applied(PASS, sites))
}
