//! Example programs built through the graph API. These ship as test data and
//! CLI demo inputs; the builders are the source of truth.

use crate::ir::{DataDescriptor, ElementType, Memlet, NodeKind, Sdfg, StateId};
use crate::library::{Alpha, LibraryNode, LibraryNodeKind, Tiling};
use crate::symbolic::SymExpr;

fn vec_f32(name: &str, len: SymExpr) -> DataDescriptor {
    DataDescriptor::array(name, ElementType::F32, vec![len])
}

fn mat_f32(name: &str, rows: SymExpr, cols: SymExpr) -> DataDescriptor {
    DataDescriptor::array(name, ElementType::F32, vec![rows, cols])
}

/// Connects `lib` node inputs/outputs to access nodes over whole containers.
fn wire_library(
    sdfg: &mut Sdfg,
    state: StateId,
    lib: LibraryNode,
    inputs: &[(&str, &str)],
    outputs: &[(&str, &str)],
) {
    let full: Vec<(String, Memlet)> = inputs
        .iter()
        .chain(outputs.iter())
        .map(|(_, data)| {
            (
                data.to_string(),
                Memlet::all(sdfg.container(data).expect("container declared")),
            )
        })
        .collect();
    let st = sdfg.state_mut(state);
    let node = st.add(None, NodeKind::Library(lib));
    for (conn, data) in inputs {
        let acc = existing_or_new_access(st, *data);
        let memlet = full.iter().find(|(d, _)| d == data).unwrap().1.clone();
        st.connect(acc, None, node, Some(conn), memlet);
    }
    for (conn, data) in outputs {
        let acc = st.access(None, *data);
        let memlet = full.iter().find(|(d, _)| d == data).unwrap().1.clone();
        st.connect(node, Some(conn), acc, None, memlet);
    }
}

/// Reuses the most recent access node of `data` that already has an in-edge
/// (so chained operators read the produced version), else creates one.
fn existing_or_new_access(st: &mut crate::ir::State, data: &str) -> crate::ir::NodeId {
    let candidate = st
        .nodes()
        .filter(|n| matches!(&n.kind, NodeKind::Access { data: d } if d == data))
        .map(|n| n.id)
        .last();
    match candidate {
        Some(id) => id,
        None => st.access(None, data),
    }
}

/// Two chained vector operations: `z = alpha*x + y`, then `result = z . w`.
/// `z` is a transient DRAM temporary in the naive layout.
pub fn axpydot(alpha: f64) -> Sdfg {
    let mut g = Sdfg::new("axpydot");
    g.add_symbol("n");
    let n = SymExpr::sym("n");
    g.add_container(vec_f32("x", n.clone())).unwrap();
    g.add_container(vec_f32("y", n.clone())).unwrap();
    g.add_container(vec_f32("w", n.clone())).unwrap();
    g.add_container(vec_f32("z", n.clone()).transient(true))
        .unwrap();
    g.add_container(DataDescriptor::scalar("result", ElementType::F32))
        .unwrap();
    let st = g.add_state("main");
    wire_library(
        &mut g,
        st,
        LibraryNode::new(
            "axpy0",
            LibraryNodeKind::Axpy {
                alpha: Alpha::Literal(alpha),
            },
        ),
        &[("x", "x"), ("y", "y")],
        &[("z", "z")],
    );
    wire_library(
        &mut g,
        st,
        LibraryNode::new("dot0", LibraryNodeKind::dot()),
        &[("x", "z"), ("y", "w")],
        &[("r", "result")],
    );
    crate::ir::path::autovolume(&mut g, st);
    g
}

/// Composite matrix kernel: two rank-1 updates, a transposed matrix-vector
/// product, a vector add, and a matrix-vector product, with DRAM temporaries
/// in the naive layout. Column-tile iteration orders are matched between the
/// rank-1 updates and the transposed product so the streaming passes can fuse
/// them; the final product walks row-major.
pub fn gemver(tile: u32) -> Sdfg {
    let mut g = Sdfg::new("gemver");
    g.add_symbol("N");
    let n = SymExpr::sym("N");
    g.add_container(mat_f32("A", n.clone(), n.clone())).unwrap();
    for v in ["u1", "v1", "u2", "v2", "y", "z"] {
        g.add_container(vec_f32(v, n.clone())).unwrap();
    }
    g.add_container(vec_f32("w", n.clone())).unwrap();
    g.add_container(mat_f32("B1", n.clone(), n.clone()).transient(true))
        .unwrap();
    g.add_container(mat_f32("B2", n.clone(), n.clone()).transient(true))
        .unwrap();
    g.add_container(vec_f32("t", n.clone()).transient(true))
        .unwrap();
    g.add_container(vec_f32("xv", n.clone()).transient(true))
        .unwrap();
    let st = g.add_state("main");
    let ct = |name: &str| {
        LibraryNode::new(
            name,
            LibraryNodeKind::Ger {
                tiling: Tiling::ColumnTiles,
                tile_size: tile,
            },
        )
    };
    wire_library(&mut g, st, ct("ger1"), &[("A", "A"), ("x", "u1"), ("y", "v1")], &[("A_out", "B1")]);
    wire_library(&mut g, st, ct("ger2"), &[("A", "B1"), ("x", "u2"), ("y", "v2")], &[("A_out", "B2")]);
    wire_library(
        &mut g,
        st,
        LibraryNode::new(
            "gemv_t",
            LibraryNodeKind::Gemv {
                transposed: true,
                tiling: Tiling::ColumnTiles,
                tile_size: tile,
            },
        ),
        &[("A", "B2"), ("x", "y")],
        &[("y", "t")],
    );
    wire_library(
        &mut g,
        st,
        LibraryNode::new(
            "addz",
            LibraryNodeKind::Axpy {
                alpha: Alpha::Literal(1.0),
            },
        ),
        &[("x", "t"), ("y", "z")],
        &[("z", "xv")],
    );
    wire_library(
        &mut g,
        st,
        LibraryNode::new(
            "gemv_w",
            LibraryNodeKind::Gemv {
                transposed: false,
                tiling: Tiling::RowMajor,
                tile_size: tile,
            },
        ),
        &[("A", "B2"), ("x", "xv")],
        &[("y", "w")],
    );
    crate::ir::path::autovolume(&mut g, st);
    g
}

/// `C = A x B` as a single abstract node marked for systolic expansion over
/// `p` elements.
pub fn gemm_systolic(p: u32) -> Sdfg {
    let mut g = Sdfg::new("gemm_systolic");
    for s in ["N", "M", "K"] {
        g.add_symbol(s);
    }
    let (n, m, k) = (SymExpr::sym("N"), SymExpr::sym("M"), SymExpr::sym("K"));
    g.add_container(mat_f32("A", n.clone(), k.clone())).unwrap();
    g.add_container(mat_f32("B", k.clone(), m.clone())).unwrap();
    g.add_container(mat_f32("C", n.clone(), m.clone())).unwrap();
    let st = g.add_state("main");
    wire_library(
        &mut g,
        st,
        LibraryNode::new(
            "mm0",
            LibraryNodeKind::Gemm {
                systolic_p: Some(p),
            },
        ),
        &[("A", "A"), ("B", "B")],
        &[("C", "C")],
    );
    crate::ir::path::autovolume(&mut g, st);
    g
}

/// A small dense layer `y = W x` used by the constant-folding pass tests.
pub fn dense_layer() -> Sdfg {
    let mut g = Sdfg::new("dense_layer");
    g.add_symbol("R");
    g.add_symbol("C");
    let (r, c) = (SymExpr::sym("R"), SymExpr::sym("C"));
    g.add_container(mat_f32("weights", r.clone(), c.clone())).unwrap();
    g.add_container(vec_f32("x", c.clone())).unwrap();
    g.add_container(vec_f32("y", r.clone())).unwrap();
    let st = g.add_state("main");
    wire_library(
        &mut g,
        st,
        LibraryNode::new("fc0", LibraryNodeKind::MatMul),
        &[("A", "weights"), ("B", "x")],
        &[("C", "y")],
    );
    crate::ir::path::autovolume(&mut g, st);
    g
}

/// The two-sweep diffusion stencil program in the JSON DSL, scaled to the
/// given grid.
pub fn diffusion2d_json(rows: u64, cols: u64, vectorization: u32) -> String {
    format!(
        r#"{{
  "dimensions": [{rows}, {cols}],
  "vectorization": {vectorization},
  "outputs": ["d"],
  "inputs": {{
    "a":  {{"data_type": "float32", "input_dims": ["j", "k"]}},
    "c0": {{"data_type": "float32", "input_dims": []}},
    "c1": {{"data_type": "float32", "input_dims": []}},
    "c2": {{"data_type": "float32", "input_dims": []}},
    "c3": {{"data_type": "float32", "input_dims": []}},
    "c4": {{"data_type": "float32", "input_dims": []}}
  }},
  "program": {{
    "b": {{
      "data_type": "float32",
      "boundary": {{"a": {{"type": "constant", "value": 0}}}},
      "computation": "b = c0*a[j,k] + c1*a[j-1,k] + c2*a[j+1,k] + c3*a[j,k-1] + c4*a[j,k+1]"
    }},
    "d": {{
      "data_type": "float32",
      "boundary": {{"b": {{"type": "constant", "value": 0}}}},
      "computation": "d = c0*b[j,k] + c1*b[j-1,k] + c2*b[j+1,k] + c3*b[j,k-1] + c4*b[j,k+1]"
    }}
  }}
}}"#
    )
}
