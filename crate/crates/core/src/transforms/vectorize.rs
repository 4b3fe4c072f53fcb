//! Vectorization of a container: the element type widens to `W` lanes, the
//! innermost dimension shrinks by `W`, volumes rescale to vector elements,
//! and attached library nodes record the width to control their unrolling
//! and accumulation factors upon expansion.
//!
//! The pass operates on library-level graphs (whole-container memlets); it
//! runs before expansion in the ordered pipeline, which is the only point
//! where access contiguity is trivially guaranteed.

use super::{check_valid, PassError, PassReport};
use crate::ir::{ContainerKind, ElementType, Memlet, NodeKind, Sdfg};

pub fn vectorize(sdfg: &mut Sdfg, container: &str, width: u32) -> Result<PassReport, PassError> {
    const PASS: &str = "vectorize";
    let fail = |message: String| PassError::Failed {
        pass: PASS.to_string(),
        message,
    };
    if width == 0 {
        return Err(fail("width must be >= 1".to_string()));
    }
    if width == 1 {
        return Ok(PassReport::skipped(PASS, "width 1 is the identity"));
    }
    let desc = sdfg
        .container(container)
        .ok_or_else(|| fail(format!("unknown container `{container}`")))?
        .clone();
    if desc.kind != ContainerKind::Array || desc.shape.is_empty() {
        return Ok(PassReport::skipped(PASS, "only arrays can be vectorized"));
    }
    let ElementType::Scalar(base) = desc.element else {
        return Ok(PassReport::skipped(PASS, "already vectorized"));
    };
    let innermost = desc.shape.last().unwrap();
    if let Some(extent) = innermost.as_int() {
        if extent % width as i128 != 0 {
            return Err(fail(format!(
                "innermost extent {extent} not divisible by {width}"
            )));
        }
    }

    // Every attached edge must cover the whole container (library level) and
    // every neighbor must be an access or library node.
    for state_id in sdfg.state_ids() {
        let state = sdfg.state(state_id);
        for (_, edge) in state.edges() {
            if edge.memlet.data != container {
                continue;
            }
            let full = Memlet::all(&desc);
            if edge.memlet.subset != full.subset {
                return Err(fail(format!(
                    "container `{container}` has non-whole accesses; vectorize before expansion"
                )));
            }
            for endpoint in [edge.src, edge.dst] {
                match &state.node(endpoint).kind {
                    NodeKind::Access { .. } | NodeKind::Library(_) => {}
                    _ => {
                        return Err(fail(format!(
                            "container `{container}` is attached to expanded structure"
                        )))
                    }
                }
            }
        }
    }

    // Rewrite the descriptor and the whole-container memlets.
    {
        let d = sdfg.containers.get_mut(container).unwrap();
        d.element = ElementType::vector(base, width);
        let last = d.shape.len() - 1;
        d.shape[last] = d.shape[last]
            .floordiv(&crate::symbolic::SymExpr::int(width as i128))
            .expect("width is non-zero");
    }
    let new_full = Memlet::all(sdfg.container(container).unwrap());
    let mut touched_nodes = Vec::new();
    for state_id in sdfg.state_ids().collect::<Vec<_>>() {
        let state = sdfg.state_mut(state_id);
        let edge_ids: Vec<usize> = state.edges().map(|(id, _)| id).collect();
        for eid in edge_ids {
            let edge = state.edge(eid);
            if edge.memlet.data != container {
                continue;
            }
            let (src, dst) = (edge.src, edge.dst);
            let memlet = &mut state.edge_mut(eid).memlet;
            memlet.subset = new_full.subset.clone();
            for endpoint in [src, dst] {
                if matches!(state.node(endpoint).kind, NodeKind::Library(_)) {
                    touched_nodes.push((state_id, endpoint));
                }
            }
        }
    }
    for (state_id, node) in touched_nodes {
        if let NodeKind::Library(lib) = &mut sdfg.state_mut(state_id).node_mut(node).kind {
            lib.width = lib.width.max(width);
        }
    }
    for state_id in sdfg.state_ids().collect::<Vec<_>>() {
        crate::ir::path::autovolume(sdfg, state_id);
    }
    check_valid(PASS, sdfg)?;
    Ok(PassReport::applied(
        PASS,
        vec![format!("{container}: {width}-lane vector elements")],
    ))
}
