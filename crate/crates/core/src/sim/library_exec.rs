//! Direct dense executors for library nodes, used by the reference
//! interpreter on graphs that have not (or not fully) been expanded. These
//! compute in f64 and are the behavioral baseline the expansions are checked
//! against.

use std::collections::BTreeMap;

use super::{EvalCtx, SimError, TensorStore, Value};
use crate::ir::{ContainerKind, NodeId, NodeKind, ScalarType, Sdfg, State};
use crate::library::{Alpha, LibraryNode, LibraryNodeKind, StencilSpec};
use crate::symbolic::SymBinding;

pub(crate) fn execute(
    sdfg: &Sdfg,
    state: &State,
    node: NodeId,
    store: &mut TensorStore,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let NodeKind::Library(lib) = &state.node(node).kind else {
        return Err(SimError::Graph("expected a library node".into()));
    };
    let conns = connector_map(state, node);
    match &lib.kind {
        LibraryNodeKind::Axpy { alpha } => {
            let x = read_flat(sdfg, store, &conns["x"], binding)?;
            let y = read_flat(sdfg, store, &conns["y"], binding)?;
            let a = alpha_value(alpha, binding)?;
            let z: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + yv).collect();
            write_flat(sdfg, store, &conns["z"], &z, binding)
        }
        LibraryNodeKind::Dot { .. } => {
            let x = read_flat(sdfg, store, &conns["x"], binding)?;
            let y = read_flat(sdfg, store, &conns["y"], binding)?;
            let r: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            write_flat(sdfg, store, &conns["r"], &[r], binding)
        }
        LibraryNodeKind::Gemv { transposed, .. } => {
            let (a_shape, a) = read_grid(sdfg, store, &conns["A"], binding)?;
            let x = read_flat(sdfg, store, &conns["x"], binding)?;
            let (rows, cols) = (a_shape[0] as usize, a_shape[1] as usize);
            let out_len = if *transposed { cols } else { rows };
            let mut y = vec![0.0f64; out_len];
            for i in 0..rows {
                for j in 0..cols {
                    if *transposed {
                        y[j] += a[i * cols + j] * x[i];
                    } else {
                        y[i] += a[i * cols + j] * x[j];
                    }
                }
            }
            write_flat(sdfg, store, &conns["y"], &y, binding)
        }
        LibraryNodeKind::Ger { .. } => {
            let (a_shape, a) = read_grid(sdfg, store, &conns["A"], binding)?;
            let x = read_flat(sdfg, store, &conns["x"], binding)?;
            let y = read_flat(sdfg, store, &conns["y"], binding)?;
            let (rows, cols) = (a_shape[0] as usize, a_shape[1] as usize);
            let mut out = vec![0.0f64; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[i * cols + j] = a[i * cols + j] + x[i] * y[j];
                }
            }
            write_flat(sdfg, store, &conns["A_out"], &out, binding)
        }
        LibraryNodeKind::Gemm { .. } => {
            let (a_shape, a) = read_grid(sdfg, store, &conns["A"], binding)?;
            let (b_shape, b) = read_grid(sdfg, store, &conns["B"], binding)?;
            let (n, k, m) = (a_shape[0] as usize, a_shape[1] as usize, b_shape[1] as usize);
            let mut c = vec![0.0f64; n * m];
            for i in 0..n {
                for kk in 0..k {
                    let av = a[i * k + kk];
                    for j in 0..m {
                        c[i * m + j] += av * b[kk * m + j];
                    }
                }
            }
            write_flat(sdfg, store, &conns["C"], &c, binding)
        }
        LibraryNodeKind::MatMul => {
            // Rank dispatch mirrors the expansion table.
            let a_rank = container_shape(sdfg, &conns["A"], binding)?.len();
            let b_rank = container_shape(sdfg, &conns["B"], binding)?.len();
            let (a_shape, a) = read_grid(sdfg, store, &conns["A"], binding)?;
            let b = read_flat(sdfg, store, &conns["B"], binding)?;
            match (a_rank, b_rank) {
                (2, 2) => {
                    let b_shape = container_shape(sdfg, &conns["B"], binding)?;
                    let (n, k, m) = (
                        a_shape[0] as usize,
                        a_shape[1] as usize,
                        b_shape[1] as usize,
                    );
                    let mut c = vec![0.0f64; n * m];
                    for i in 0..n {
                        for kk in 0..k {
                            for j in 0..m {
                                c[i * m + j] += a[i * k + kk] * b[kk * m + j];
                            }
                        }
                    }
                    write_flat(sdfg, store, &conns["C"], &c, binding)
                }
                (2, 1) => {
                    let (rows, cols) = (a_shape[0] as usize, a_shape[1] as usize);
                    let mut y = vec![0.0f64; rows];
                    for i in 0..rows {
                        for j in 0..cols {
                            y[i] += a[i * cols + j] * b[j];
                        }
                    }
                    write_flat(sdfg, store, &conns["C"], &y, binding)
                }
                (1, 1) => {
                    let r: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
                    write_flat(sdfg, store, &conns["C"], &[r], binding)
                }
                other => Err(SimError::Graph(format!(
                    "matmul operand ranks {other:?} unsupported"
                ))),
            }
        }
        LibraryNodeKind::Stencil(spec) => execute_stencil(sdfg, store, lib, spec, &conns, binding),
    }
}

/// Connector name -> container name, from incident edges.
fn connector_map(state: &State, node: NodeId) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for eid in state.in_edges(node) {
        let e = state.edge(eid);
        if let Some(conn) = &e.dst_conn {
            out.insert(conn.clone(), e.memlet.data.clone());
        }
    }
    for eid in state.out_edges(node) {
        let e = state.edge(eid);
        if let Some(conn) = &e.src_conn {
            out.insert(conn.clone(), e.memlet.data.clone());
        }
    }
    out
}

fn alpha_value(alpha: &Alpha, binding: &SymBinding) -> Result<f64, SimError> {
    Ok(match alpha {
        Alpha::Literal(v) => *v,
        Alpha::Symbol(s) => binding.get(s)? as f64,
    })
}

fn container_shape(
    sdfg: &Sdfg,
    data: &str,
    binding: &SymBinding,
) -> Result<Vec<u64>, SimError> {
    let desc = sdfg
        .container(data)
        .ok_or_else(|| SimError::UnknownContainer(data.to_string()))?;
    let mut out = Vec::new();
    for dim in &desc.shape {
        out.push(dim.evaluate(binding)?.max(0) as u64);
    }
    Ok(out)
}

/// Reads a container (array or stream) as flat base scalars. Streams are
/// drained of exactly the scalar count implied by their grid shape and lane
/// width; vector elements flatten to scalars.
fn read_flat(
    sdfg: &Sdfg,
    store: &mut TensorStore,
    data: &str,
    binding: &SymBinding,
) -> Result<Vec<f64>, SimError> {
    read_flat_n(sdfg, store, data, binding, None)
}

/// Reads a container as flat scalars. For streams, pops elements until
/// `scalar_count` scalars have been collected (or the shape-implied count
/// when `None`).
fn read_flat_n(
    sdfg: &Sdfg,
    store: &mut TensorStore,
    data: &str,
    binding: &SymBinding,
    scalar_count: Option<u64>,
) -> Result<Vec<f64>, SimError> {
    let desc = sdfg
        .container(data)
        .ok_or_else(|| SimError::UnknownContainer(data.to_string()))?;
    if desc.kind == ContainerKind::Stream {
        let want = scalar_count
            .unwrap_or_else(|| desc.element_count(binding).unwrap_or(1).max(1));
        let mut out = Vec::new();
        let queue = store.queue(data, 0)?;
        while (out.len() as u64) < want {
            let value = queue
                .pop_front()
                .ok_or_else(|| SimError::PopEmpty(data.to_string()))?;
            flatten_value(&value, &mut out)?;
        }
        Ok(out)
    } else {
        Ok(store.tensor(data)?.as_f64_vec())
    }
}

fn flatten_value(value: &Value, out: &mut Vec<f64>) -> Result<(), SimError> {
    match value {
        Value::Vector(items) => {
            for item in items {
                flatten_value(item, out)?;
            }
            Ok(())
        }
        scalar => {
            out.push(scalar.as_f64().ok_or_else(|| SimError::Type {
                context: "library executor".into(),
                message: "non-numeric stream element".into(),
            })?);
            Ok(())
        }
    }
}

fn read_grid(
    sdfg: &Sdfg,
    store: &mut TensorStore,
    data: &str,
    binding: &SymBinding,
) -> Result<(Vec<u64>, Vec<f64>), SimError> {
    let shape = container_shape(sdfg, data, binding)?;
    let flat = read_flat(sdfg, store, data, binding)?;
    Ok((shape, flat))
}

fn write_flat(
    sdfg: &Sdfg,
    store: &mut TensorStore,
    data: &str,
    values: &[f64],
    binding: &SymBinding,
) -> Result<(), SimError> {
    let desc = sdfg
        .container(data)
        .ok_or_else(|| SimError::UnknownContainer(data.to_string()))?;
    if desc.kind == ContainerKind::Stream {
        let width = desc.element.width() as usize;
        let base = desc.element.base();
        let queue = store.queue(data, 0)?;
        if width == 1 {
            for v in values {
                queue.push_back(scalar_value(base, *v));
            }
        } else {
            for chunk in values.chunks(width) {
                queue.push_back(Value::Vector(
                    chunk.iter().map(|v| scalar_value(base, *v)).collect(),
                ));
            }
        }
        return Ok(());
    }
    let tensor = store.tensor_mut(data)?;
    if tensor.data.len() != values.len() {
        return Err(SimError::ShapeMismatch {
            name: data.to_string(),
            got: values.len(),
            want: tensor.data.len(),
        });
    }
    for (i, v) in values.iter().enumerate() {
        let value = scalar_value(tensor.data.scalar_type(), *v);
        tensor.data.set(i, &value)?;
    }
    Ok(())
}

fn scalar_value(scalar: ScalarType, v: f64) -> Value {
    match scalar {
        ScalarType::F32 => Value::F32(v as f32),
        ScalarType::F64 => Value::F64(v),
        ScalarType::I32 | ScalarType::I64 => Value::Int(v as i128),
    }
}

/// Direct nested-loop stencil evaluation with constant boundary fill.
fn execute_stencil(
    sdfg: &Sdfg,
    store: &mut TensorStore,
    lib: &LibraryNode,
    spec: &StencilSpec,
    conns: &BTreeMap<String, String>,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let dims: Vec<i64> = spec.dims.iter().map(|d| *d as i64).collect();
    let total: i64 = dims.iter().product();
    let mut grids: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
    for input in &spec.inputs {
        let data = conns.get(&input.name).ok_or_else(|| {
            SimError::Graph(format!(
                "stencil `{}` input `{}` unconnected",
                lib.name, input.name
            ))
        })?;
        if input.offsets.is_empty() {
            let flat = read_flat(sdfg, store, data, binding)?;
            scalars.insert(input.name.clone(), flat.first().copied().unwrap_or(0.0));
        } else {
            grids.insert(
                input.name.clone(),
                read_flat_n(sdfg, store, data, binding, Some(total as u64))?,
            );
        }
    }
    let strides = crate::library::stencil_buffers::row_major_strides(&spec.dims);
    let mut out = vec![0.0f64; total as usize];
    let mut point = vec![0i64; dims.len()];
    for flat in 0..total {
        // Decompose flat into per-dimension coordinates.
        let mut rem = flat;
        for d in (0..dims.len()).rev() {
            point[d] = rem % dims[d];
            rem /= dims[d];
        }
        let mut connectors: BTreeMap<String, Value> = BTreeMap::new();
        for (name, v) in &scalars {
            connectors.insert(name.clone(), Value::F64(*v));
        }
        for input in spec.grid_inputs() {
            let grid = &grids[&input.name];
            for (k, offset) in input.offsets.iter().enumerate() {
                let mut ok = true;
                let mut at: i64 = 0;
                for d in 0..dims.len() {
                    let c = point[d] + offset[d];
                    if c < 0 || c >= dims[d] {
                        ok = false;
                        break;
                    }
                    at += c * strides[d];
                }
                let value = if ok {
                    grid[at as usize]
                } else {
                    input.boundary.unwrap_or(0.0)
                };
                connectors.insert(StencilSpec::access_ref(&input.name, k), Value::F64(value));
            }
        }
        let ctx = EvalCtx {
            connectors,
            binding,
            constants: &[],
            f32_literals: false,
        };
        out[flat as usize] = super::eval_value(&spec.computation, &ctx)?
            .as_f64()
            .ok_or_else(|| SimError::Type {
                context: format!("stencil `{}`", lib.name),
                message: "non-numeric stencil result".into(),
            })?;
    }
    let out_data = conns.get(&spec.output).ok_or_else(|| {
        SimError::Graph(format!(
            "stencil `{}` output `{}` unconnected",
            lib.name, spec.output
        ))
    })?;
    write_flat(sdfg, store, out_data, &out, binding)
}
