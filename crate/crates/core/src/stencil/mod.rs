//! The JSON stencil DSL frontend: parses programs of chained stencil
//! operators, plans the inter-operator delay buffers that keep the pipeline
//! deadlock-free, and emits a graph of stencil library nodes connected by
//! streams, with one reader element per grid input and one writer per output.

use indexmap::IndexMap;
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{
    parse_value_expr, ContainerKind, DataDescriptor, ElementType, MapSchedule, Memlet, NodeKind,
    RangeExpr, ScalarType, Sdfg, Tasklet, ValueExpr,
};
use crate::library::{LibraryNode, LibraryNodeKind, StencilInput, StencilSpec};
use crate::symbolic::SymExpr;

#[derive(Debug, Error)]
pub enum StencilError {
    #[error("program is not valid JSON: {0}")]
    Json(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("undeclared reference `{0}`")]
    Undeclared(String),
    #[error("program dependencies contain a cycle through `{0}`")]
    Cyclic(String),
    #[error("malformed access `{access}` of `{input}`: {message}")]
    MalformedOffset {
        input: String,
        access: String,
        message: String,
    },
    #[error("offset {offset:?} exceeds the domain {dims:?}")]
    OffsetExceedsDomain { offset: Vec<i64>, dims: Vec<u64> },
    #[error("unsupported boundary type `{0}` (only `constant`)")]
    UnsupportedBoundary(String),
    #[error("graph construction failed: {0}")]
    Build(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDecl {
    pub data_type: ScalarType,
    /// Dimension names; empty for scalars.
    pub input_dims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorDecl {
    pub data_type: ScalarType,
    /// Referenced grid name -> constant boundary fill value.
    pub boundary: IndexMap<String, f64>,
    /// Original computation text.
    pub computation: String,
    /// Accesses per referenced grid (input or earlier operator).
    pub accesses: IndexMap<String, Vec<Vec<i64>>>,
    /// Computation with grid accesses rewritten to `name__k` references.
    pub body: ValueExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StencilProgram {
    pub dimensions: Vec<u64>,
    pub vectorization: u32,
    pub inputs: IndexMap<String, InputDecl>,
    pub outputs: Vec<String>,
    pub operators: IndexMap<String, OperatorDecl>,
}

impl StencilProgram {
    /// Names an operator references (grids and scalars).
    pub fn references(&self, op: &str) -> Vec<String> {
        let decl = &self.operators[op];
        let mut out: Vec<String> = decl.accesses.keys().cloned().collect();
        for name in decl.body.refs() {
            let name = name.split("__").next().unwrap_or(name);
            if (self.inputs.contains_key(name) || self.operators.contains_key(name))
                && !out.contains(&name.to_string())
            {
                out.push(name.to_string());
            }
        }
        out
    }

    /// Total scalar count of the grid.
    pub fn total(&self) -> u64 {
        self.dimensions.iter().product()
    }
}

fn parse_scalar_type(s: &str) -> Result<ScalarType, StencilError> {
    match s {
        "float32" => Ok(ScalarType::F32),
        "float64" => Ok(ScalarType::F64),
        other => Err(StencilError::Schema(format!("unknown data_type `{other}`"))),
    }
}

/// Parses the JSON program description and validates it: declared
/// references, acyclic dependencies, offsets within the domain, constant
/// boundaries only.
pub fn parse_program(text: &str) -> Result<StencilProgram, StencilError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| StencilError::Json(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| StencilError::Schema("top level must be an object".into()))?;
    let dimensions: Vec<u64> = obj
        .get("dimensions")
        .and_then(|d| d.as_array())
        .ok_or_else(|| StencilError::Schema("missing `dimensions`".into()))?
        .iter()
        .map(|v| {
            v.as_u64()
                .ok_or_else(|| StencilError::Schema("dimensions must be positive integers".into()))
        })
        .collect::<Result<_, _>>()?;
    if dimensions.is_empty() || dimensions.iter().any(|d| *d == 0) {
        return Err(StencilError::Schema("dimensions must be non-empty and positive".into()));
    }
    let vectorization = obj
        .get("vectorization")
        .map(|v| {
            v.as_u64()
                .filter(|w| *w >= 1)
                .ok_or_else(|| StencilError::Schema("vectorization must be >= 1".into()))
        })
        .transpose()?
        .unwrap_or(1) as u32;
    if dimensions[dimensions.len() - 1] % vectorization as u64 != 0 {
        return Err(StencilError::Schema(format!(
            "innermost dimension {} not divisible by vectorization {}",
            dimensions[dimensions.len() - 1],
            vectorization
        )));
    }
    let outputs: Vec<String> = obj
        .get("outputs")
        .and_then(|o| o.as_array())
        .ok_or_else(|| StencilError::Schema("missing `outputs`".into()))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(String::from)
                .ok_or_else(|| StencilError::Schema("outputs must be strings".into()))
        })
        .collect::<Result<_, _>>()?;

    let mut inputs = IndexMap::new();
    let input_obj = obj
        .get("inputs")
        .and_then(|i| i.as_object())
        .ok_or_else(|| StencilError::Schema("missing `inputs`".into()))?;
    for (name, decl) in input_obj {
        let decl = decl
            .as_object()
            .ok_or_else(|| StencilError::Schema(format!("input `{name}` must be an object")))?;
        let data_type = parse_scalar_type(
            decl.get("data_type")
                .and_then(|d| d.as_str())
                .ok_or_else(|| StencilError::Schema(format!("input `{name}` needs data_type")))?,
        )?;
        let input_dims: Vec<String> = decl
            .get("input_dims")
            .and_then(|d| d.as_array())
            .map(|a| {
                a.iter()
                    .map(|v| v.as_str().map(String::from))
                    .collect::<Option<Vec<_>>>()
            })
            .unwrap_or(Some(Vec::new()))
            .ok_or_else(|| StencilError::Schema(format!("input `{name}` has bad input_dims")))?;
        if !input_dims.is_empty() && input_dims.len() != dimensions.len() {
            return Err(StencilError::Schema(format!(
                "input `{name}` has {} dims; the domain has {}",
                input_dims.len(),
                dimensions.len()
            )));
        }
        inputs.insert(
            name.clone(),
            InputDecl {
                data_type,
                input_dims,
            },
        );
    }

    // Dimension names come positionally from the first grid input.
    let dim_names: Vec<String> = inputs
        .values()
        .find(|d| !d.input_dims.is_empty())
        .map(|d| d.input_dims.clone())
        .unwrap_or_else(|| (0..dimensions.len()).map(|i| format!("d{i}")).collect());

    let mut operators: IndexMap<String, OperatorDecl> = IndexMap::new();
    let program_obj = obj
        .get("program")
        .and_then(|p| p.as_object())
        .ok_or_else(|| StencilError::Schema("missing `program`".into()))?;
    for (name, decl) in program_obj {
        let decl = decl
            .as_object()
            .ok_or_else(|| StencilError::Schema(format!("operator `{name}` must be an object")))?;
        let data_type = parse_scalar_type(
            decl.get("data_type")
                .and_then(|d| d.as_str())
                .ok_or_else(|| StencilError::Schema(format!("operator `{name}` needs data_type")))?,
        )?;
        let mut boundary = IndexMap::new();
        if let Some(b) = decl.get("boundary") {
            let b = b
                .as_object()
                .ok_or_else(|| StencilError::Schema(format!("operator `{name}` has bad boundary")))?;
            for (input, policy) in b {
                let policy = policy.as_object().ok_or_else(|| {
                    StencilError::Schema(format!("boundary for `{input}` must be an object"))
                })?;
                let kind = policy
                    .get("type")
                    .and_then(|t| t.as_str())
                    .unwrap_or("constant");
                if kind != "constant" {
                    return Err(StencilError::UnsupportedBoundary(kind.to_string()));
                }
                let value = policy.get("value").and_then(|v| v.as_f64()).unwrap_or(0.0);
                boundary.insert(input.clone(), value);
            }
        }
        let computation = decl
            .get("computation")
            .and_then(|c| c.as_str())
            .ok_or_else(|| StencilError::Schema(format!("operator `{name}` needs computation")))?
            .to_string();
        let (accesses, body) = parse_computation(name, &computation, &dim_names)?;
        operators.insert(
            name.clone(),
            OperatorDecl {
                data_type,
                boundary,
                computation,
                accesses,
                body,
            },
        );
    }

    let program = StencilProgram {
        dimensions,
        vectorization,
        inputs,
        outputs,
        operators,
    };
    validate_program(&program)?;
    Ok(program)
}

/// Parses `lhs = expr`, turning indexed accesses `g[j-1,k]` into relative
/// offsets and `g__k` references.
fn parse_computation(
    op: &str,
    text: &str,
    dim_names: &[String],
) -> Result<(IndexMap<String, Vec<Vec<i64>>>, ValueExpr), StencilError> {
    let rhs = match text.split_once('=') {
        Some((lhs, rhs)) => {
            let _ = (lhs, op);
            rhs.trim()
        }
        None => text.trim(),
    };
    let raw = parse_value_expr(rhs).map_err(|e| StencilError::Schema(e.to_string()))?;
    let mut accesses: IndexMap<String, Vec<Vec<i64>>> = IndexMap::new();
    let result = rewrite_accesses(&raw, dim_names, &mut accesses)?;
    Ok((accesses, result))
}

fn rewrite_accesses(
    expr: &ValueExpr,
    dim_names: &[String],
    accesses: &mut IndexMap<String, Vec<Vec<i64>>>,
) -> Result<ValueExpr, StencilError> {
    Ok(match expr {
        ValueExpr::ConstRef(name, idx) => {
            if idx.len() != dim_names.len() {
                return Err(StencilError::MalformedOffset {
                    input: name.clone(),
                    access: format!("{expr}"),
                    message: format!("expected {} indices", dim_names.len()),
                });
            }
            let mut offset = Vec::with_capacity(idx.len());
            for (e, dim) in idx.iter().zip(dim_names) {
                let sym = value_to_sym(e).ok_or_else(|| StencilError::MalformedOffset {
                    input: name.clone(),
                    access: format!("{expr}"),
                    message: "index must be an integer expression".into(),
                })?;
                let rel = sym.sub(&SymExpr::sym(dim.clone()));
                let lit = rel.as_int().ok_or_else(|| StencilError::MalformedOffset {
                    input: name.clone(),
                    access: format!("{expr}"),
                    message: format!("index must be `{dim}` plus a constant"),
                })?;
                offset.push(lit as i64);
            }
            let list = accesses.entry(name.clone()).or_default();
            let k = match list.iter().position(|o| *o == offset) {
                Some(k) => k,
                None => {
                    list.push(offset);
                    list.len() - 1
                }
            };
            ValueExpr::var(StencilSpec::access_ref(name, k))
        }
        ValueExpr::Bin(op, a, b) => ValueExpr::Bin(
            *op,
            Box::new(rewrite_accesses(a, dim_names, accesses)?),
            Box::new(rewrite_accesses(b, dim_names, accesses)?),
        ),
        ValueExpr::Neg(a) => ValueExpr::Neg(Box::new(rewrite_accesses(a, dim_names, accesses)?)),
        ValueExpr::Select(c, a, b) => ValueExpr::Select(
            Box::new(rewrite_accesses(c, dim_names, accesses)?),
            Box::new(rewrite_accesses(a, dim_names, accesses)?),
            Box::new(rewrite_accesses(b, dim_names, accesses)?),
        ),
        other => other.clone(),
    })
}

fn value_to_sym(e: &ValueExpr) -> Option<SymExpr> {
    match e {
        ValueExpr::Int(v) => Some(SymExpr::int(*v)),
        ValueExpr::Ref(name) => Some(SymExpr::sym(name.clone())),
        ValueExpr::Neg(a) => Some(value_to_sym(a)?.neg()),
        ValueExpr::Bin(op, a, b) => {
            let (a, b) = (value_to_sym(a)?, value_to_sym(b)?);
            match op {
                crate::ir::BinOp::Add => Some(a.add(&b)),
                crate::ir::BinOp::Sub => Some(a.sub(&b)),
                crate::ir::BinOp::Mul => Some(a.mul(&b)),
                crate::ir::BinOp::Div => a.floordiv(&b).ok(),
                crate::ir::BinOp::Mod => a.modulo(&b).ok(),
            }
        }
        _ => None,
    }
}

fn validate_program(p: &StencilProgram) -> Result<(), StencilError> {
    for out in &p.outputs {
        if !p.operators.contains_key(out) {
            return Err(StencilError::Undeclared(out.clone()));
        }
    }
    for (name, decl) in &p.operators {
        for referenced in decl.accesses.keys() {
            if !p.inputs.contains_key(referenced) && !p.operators.contains_key(referenced) {
                return Err(StencilError::Undeclared(referenced.clone()));
            }
        }
        for r in decl.body.refs() {
            let base = r.split("__").next().unwrap_or(r);
            if !p.inputs.contains_key(base) && !p.operators.contains_key(base) {
                return Err(StencilError::Undeclared(base.to_string()));
            }
        }
        for (input, offsets) in &decl.accesses {
            for offset in offsets {
                for (d, o) in offset.iter().enumerate() {
                    if o.unsigned_abs() >= p.dimensions[d] {
                        return Err(StencilError::OffsetExceedsDomain {
                            offset: offset.clone(),
                            dims: p.dimensions.clone(),
                        });
                    }
                }
            }
            let _ = input;
        }
        let _ = name;
    }
    // Acyclic dependency order.
    topo_order(p)?;
    Ok(())
}

/// Operators in dependency order.
pub fn topo_order(p: &StencilProgram) -> Result<Vec<String>, StencilError> {
    let mut order = Vec::new();
    let mut mark: BTreeMap<&str, u8> = BTreeMap::new();
    fn visit<'a>(
        p: &'a StencilProgram,
        name: &'a str,
        mark: &mut BTreeMap<&'a str, u8>,
        order: &mut Vec<String>,
    ) -> Result<(), StencilError> {
        match mark.get(name) {
            Some(2) => return Ok(()),
            Some(1) => return Err(StencilError::Cyclic(name.to_string())),
            _ => {}
        }
        mark.insert(name, 1);
        for dep in p.references(name) {
            if p.operators.contains_key(&dep) {
                let dep_key = p.operators.get_key_value(&dep).unwrap().0.as_str();
                visit(p, dep_key, mark, order)?;
            }
        }
        mark.insert(name, 2);
        order.push(name.to_string());
        Ok(())
    }
    let names: Vec<&str> = p.operators.keys().map(|s| s.as_str()).collect();
    for name in names {
        visit(p, name, &mut mark, &mut order)?;
    }
    Ok(order)
}

/// Prints the canonical JSON form of a parsed program.
pub fn print_program(p: &StencilProgram) -> String {
    let mut root = serde_json::Map::new();
    root.insert(
        "dimensions".into(),
        serde_json::json!(p.dimensions),
    );
    root.insert("vectorization".into(), serde_json::json!(p.vectorization));
    root.insert("outputs".into(), serde_json::json!(p.outputs));
    let mut inputs = serde_json::Map::new();
    for (name, decl) in &p.inputs {
        inputs.insert(
            name.clone(),
            serde_json::json!({
                "data_type": match decl.data_type { ScalarType::F32 => "float32", _ => "float64" },
                "input_dims": decl.input_dims,
            }),
        );
    }
    root.insert("inputs".into(), serde_json::Value::Object(inputs));
    let mut program = serde_json::Map::new();
    for (name, decl) in &p.operators {
        let mut boundary = serde_json::Map::new();
        for (input, value) in &decl.boundary {
            boundary.insert(
                input.clone(),
                serde_json::json!({"type": "constant", "value": value}),
            );
        }
        program.insert(
            name.clone(),
            serde_json::json!({
                "data_type": match decl.data_type { ScalarType::F32 => "float32", _ => "float64" },
                "boundary": serde_json::Value::Object(boundary),
                "computation": decl.computation,
            }),
        );
    }
    root.insert("program".into(), serde_json::Value::Object(program));
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).unwrap()
}

// ---------------------------------------------------------------------------
// Delay planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayEdge {
    pub from: String,
    pub to: String,
    /// Delay in scalar elements inserted on this edge.
    pub delay: i64,
    /// Stream capacity in vector elements.
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayPlan {
    pub edges: Vec<DelayEdge>,
    /// Internal sliding-window extent per operator, in scalars.
    pub op_windows: BTreeMap<String, i64>,
}

impl DelayPlan {
    pub fn capacity(&self, from: &str, to: &str) -> Option<u32> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.capacity)
    }

    /// Returns a copy with every delay zeroed (minimal capacities).
    pub fn zeroed(&self) -> DelayPlan {
        DelayPlan {
            edges: self
                .edges
                .iter()
                .map(|e| DelayEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    delay: 0,
                    capacity: BASE_CAPACITY,
                })
                .collect(),
            op_windows: self.op_windows.clone(),
        }
    }
}

/// Capacity granted to every stream on top of its planned delay.
pub const BASE_CAPACITY: u32 = 2;

/// The skew an operator introduces: the span of its accesses in scalars.
fn op_skew(p: &StencilProgram, op: &str) -> i64 {
    let strides = crate::library::stencil_buffers::row_major_strides(&p.dimensions);
    let decl = &p.operators[op];
    let mut min = i64::MAX;
    let mut max = i64::MIN;
    for offsets in decl.accesses.values() {
        for offset in offsets {
            let flat: i64 = offset.iter().zip(&strides).map(|(o, s)| o * s).sum();
            min = min.min(flat);
            max = max.max(flat);
        }
    }
    if min == i64::MAX {
        0
    } else {
        max - min
    }
}

/// Sizes the delay buffers: along every path the cumulative skew is the sum
/// of traversed operator spans; at a join, each in-edge is delayed by the
/// difference to the largest sibling skew. Capacities convert scalars to
/// vectors and add a small constant.
pub fn plan_delays(p: &StencilProgram) -> Result<DelayPlan, StencilError> {
    let order = topo_order(p)?;
    // Cumulative skew *after* a node (inputs have zero).
    let mut cum: BTreeMap<String, i64> = BTreeMap::new();
    for input in p.inputs.keys() {
        cum.insert(input.clone(), 0);
    }
    let w = p.vectorization as i64;
    let mut edges = Vec::new();
    let mut op_windows = BTreeMap::new();
    for op in &order {
        let refs: Vec<String> = p
            .references(op)
            .into_iter()
            .filter(|r| {
                // Scalars carry no stream.
                p.operators.contains_key(r)
                    || !p.inputs[r].input_dims.is_empty()
            })
            .collect();
        let in_skews: Vec<i64> = refs.iter().map(|r| cum[r]).collect();
        let max_in = in_skews.iter().copied().max().unwrap_or(0);
        for (r, skew) in refs.iter().zip(&in_skews) {
            let delay = max_in - skew;
            edges.push(DelayEdge {
                from: r.clone(),
                to: op.clone(),
                delay,
                capacity: BASE_CAPACITY + ((delay + w - 1) / w) as u32,
            });
        }
        let skew = op_skew(p, op);
        op_windows.insert(op.clone(), skew + w);
        cum.insert(op.clone(), max_in + skew);
    }
    Ok(DelayPlan { edges, op_windows })
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

fn stream_name(from: &str, to: &str) -> String {
    format!("{from}_to_{to}")
}

/// Builds the pipelined graph: a reader element per grid input, a stencil
/// library node per operator, a writer element per output, with streams
/// sized per the delay plan.
pub fn build_sdfg(p: &StencilProgram, plan: &DelayPlan) -> Result<Sdfg, StencilError> {
    let w = p.vectorization;
    let mut g = Sdfg::new("stencil_program");
    let n_dims = p.dimensions.len();
    let elem_of = |st: ScalarType| {
        if w > 1 {
            ElementType::vector(st, w)
        } else {
            ElementType::Scalar(st)
        }
    };
    let grid_shape: Vec<SymExpr> = p
        .dimensions
        .iter()
        .enumerate()
        .map(|(d, dim)| {
            if d + 1 == n_dims {
                SymExpr::int((*dim / w as u64) as i128)
            } else {
                SymExpr::int(*dim as i128)
            }
        })
        .collect();

    // Containers: DRAM arrays for grid inputs/outputs, DRAM scalars for
    // parameters, and one stream per dependency edge.
    for (name, decl) in &p.inputs {
        if decl.input_dims.is_empty() {
            g.add_container(
                DataDescriptor::scalar(name, ElementType::Scalar(decl.data_type))
                    .storage(crate::ir::StorageKind::DeviceDram),
            )
            .map_err(|e| StencilError::Build(e.to_string()))?;
        } else {
            g.add_container(
                DataDescriptor::array(name, elem_of(decl.data_type), grid_shape.clone())
                    .storage(crate::ir::StorageKind::DeviceDram),
            )
            .map_err(|e| StencilError::Build(e.to_string()))?;
        }
    }
    for out in &p.outputs {
        let decl = &p.operators[out];
        g.add_container(
            DataDescriptor::array(
                format!("{out}_out"),
                elem_of(decl.data_type),
                grid_shape.clone(),
            )
            .storage(crate::ir::StorageKind::DeviceDram),
        )
        .map_err(|e| StencilError::Build(e.to_string()))?;
    }
    // Consumers per produced grid (input or operator).
    let mut consumers: IndexMap<String, Vec<String>> = IndexMap::new();
    for (op, _) in &p.operators {
        for r in p.references(op) {
            let is_grid = p.operators.contains_key(&r)
                || !p.inputs[&r].input_dims.is_empty();
            if is_grid {
                consumers.entry(r).or_default().push(op.clone());
            }
        }
    }
    for (producer, users) in &consumers {
        if p.operators.contains_key(producer) && users.len() > 1 {
            return Err(StencilError::Build(format!(
                "operator `{producer}` feeds {} consumers; fan-out from operators is not supported",
                users.len()
            )));
        }
        for user in users {
            let dtype = p
                .inputs
                .get(producer)
                .map(|d| d.data_type)
                .unwrap_or_else(|| p.operators[producer].data_type);
            let capacity = plan.capacity(producer, user).unwrap_or(BASE_CAPACITY);
            g.add_container(
                DataDescriptor::stream(stream_name(producer, user), elem_of(dtype), Vec::new())
                    .capacity(capacity.max(1)),
            )
            .map_err(|e| StencilError::Build(e.to_string()))?;
        }
    }
    for out in &p.outputs {
        let dtype = p.operators[out].data_type;
        g.add_container(
            DataDescriptor::stream(
                stream_name(out, "write"),
                elem_of(dtype),
                Vec::new(),
            )
            .capacity(BASE_CAPACITY),
        )
        .map_err(|e| StencilError::Build(e.to_string()))?;
    }

    let state = g.add_state("pipeline");

    // Reader element per grid input: row-major over vectors, one push per
    // consumer stream.
    for (name, decl) in &p.inputs {
        if decl.input_dims.is_empty() {
            continue;
        }
        let users = consumers.get(name).cloned().unwrap_or_default();
        if users.is_empty() {
            continue;
        }
        let full = Memlet::all(g.container(name).unwrap());
        let st = g.state_mut(state);
        let src = st.access(None, name);
        let params: Vec<String> = (0..n_dims).map(|d| format!("r{d}")).collect();
        let ranges: Vec<RangeExpr> = grid_shape
            .iter()
            .map(|dim| RangeExpr::span(SymExpr::zero(), dim.sub(&SymExpr::one())))
            .collect();
        let (entry, exit) = st.map_scope(
            None,
            params.iter().map(|s| s.as_str()).collect(),
            ranges,
            MapSchedule::Pipelined,
        );
        let outputs: Vec<String> = (0..users.len()).map(|i| format!("o{i}")).collect();
        let body = outputs
            .iter()
            .map(|o| crate::ir::Assign::new(o.clone(), ValueExpr::var("v")))
            .collect();
        let t = st.tasklet_node(
            Some(entry),
            Tasklet {
                name: format!("read_{name}"),
                inputs: vec![crate::ir::TaskletInput::new("v")],
                outputs,
                body,
                constants: Vec::new(),
            },
        );
        let idx: Vec<SymExpr> = params.iter().map(|pn| SymExpr::sym(pn.clone())).collect();
        crate::ir::build::read_through(
            st,
            src,
            &[(entry, full)],
            t,
            "v",
            Memlet::element(name, idx),
            name,
        );
        for (i, user) in users.iter().enumerate() {
            let stream = stream_name(name, user);
            let acc = st.access(None, &stream);
            crate::ir::build::write_through(
                st,
                t,
                &format!("o{i}"),
                Memlet::scalar(&stream),
                &[(exit, Memlet::scalar(&stream))],
                acc,
                &stream,
                None,
            );
        }
    }

    // One stencil node per operator, in dependency order.
    for op in topo_order(p)? {
        let decl = &p.operators[&op];
        let mut spec_inputs = Vec::new();
        let mut wiring: Vec<(String, String)> = Vec::new();
        for (grid, offsets) in &decl.accesses {
            spec_inputs.push(StencilInput {
                name: grid.clone(),
                offsets: offsets.clone(),
                boundary: Some(decl.boundary.get(grid).copied().unwrap_or(0.0)),
            });
            wiring.push((grid.clone(), stream_name(grid, &op)));
        }
        for r in p.references(&op) {
            if let Some(input) = p.inputs.get(&r) {
                if input.input_dims.is_empty() {
                    spec_inputs.push(StencilInput {
                        name: r.clone(),
                        offsets: Vec::new(),
                        boundary: None,
                    });
                    wiring.push((r.clone(), r.clone()));
                }
            }
        }
        let out_stream = if p.outputs.contains(&op) {
            stream_name(&op, "write")
        } else {
            let user = consumers
                .get(op.as_str())
                .and_then(|u| u.first())
                .ok_or_else(|| StencilError::Build(format!("operator `{op}` has no consumer")))?;
            stream_name(&op, user)
        };
        let spec = StencilSpec {
            dims: p.dimensions.clone(),
            inputs: spec_inputs,
            output: op.clone(),
            computation: decl.body.clone(),
        };
        let mut lib = LibraryNode::new(op.clone(), LibraryNodeKind::Stencil(spec));
        lib.width = w;
        let st = g.state_mut(state);
        let node = st.add(None, NodeKind::Library(lib));
        for (conn, container) in &wiring {
            let acc = st.access(None, container);
            st.connect(acc, None, node, Some(conn), Memlet::scalar(container));
        }
        let out_acc = st.access(None, &out_stream);
        st.connect(node, Some(&op), out_acc, None, Memlet::scalar(&out_stream));
    }

    // Writer element per output: drain the stream row-major into the array.
    for out in &p.outputs {
        let stream = stream_name(out, "write");
        let array = format!("{out}_out");
        let full = Memlet::all(g.container(&array).unwrap());
        let st = g.state_mut(state);
        let src = st.access(None, &stream);
        let dst = st.access(None, &array);
        let params: Vec<String> = (0..n_dims).map(|d| format!("w{d}")).collect();
        let ranges: Vec<RangeExpr> = grid_shape
            .iter()
            .map(|dim| RangeExpr::span(SymExpr::zero(), dim.sub(&SymExpr::one())))
            .collect();
        let (entry, exit) = st.map_scope(
            None,
            params.iter().map(|s| s.as_str()).collect(),
            ranges,
            MapSchedule::Pipelined,
        );
        let t = st.tasklet_node(
            Some(entry),
            Tasklet::parse(&format!("write_{out}"), &["v"], &["o"], "o = v").unwrap(),
        );
        crate::ir::build::read_through(
            st,
            src,
            &[(entry, Memlet::scalar(&stream))],
            t,
            "v",
            Memlet::scalar(&stream),
            &stream,
        );
        let idx: Vec<SymExpr> = params.iter().map(|pn| SymExpr::sym(pn.clone())).collect();
        crate::ir::build::write_through(
            st,
            t,
            "o",
            Memlet::element(&array, idx),
            &[(exit, full)],
            dst,
            &array,
            None,
        );
    }

    crate::ir::path::autovolume(&mut g, state);
    Ok(g)
}
