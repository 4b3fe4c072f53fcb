//! Execution engines: a sequential reference interpreter for whole graphs and
//! a concurrent bounded-FIFO simulator for kernel states.
//!
//! Both engines share the value model and the per-state schedule lowering.
//! Transient containers are zero-initialized once at program start, so
//! write-conflict accumulation starts from zero.

mod concurrent;
mod depths;
mod library_exec;
mod reference;
mod schedule;
pub mod tensor_io;

pub use concurrent::{
    run_concurrent, ConcurrentOutcome, DeadlockReport, PeStatus, PeTrace, TraceEvent,
};
pub use depths::min_depths_search;
pub use reference::run_reference;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::ir::{
    ConstData, ContainerKind, DataDescriptor, ElementType, RangeExpr, ScalarType, Sdfg, ValueExpr,
    Wcr,
};
use crate::symbolic::{SymBinding, SymError};

pub const DEFAULT_STEP_LIMIT: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Symbolic(#[from] SymError),
    #[error("container `{0}` is not allocated")]
    UnknownContainer(String),
    #[error("tensor `{name}` has {got} elements; expected {want}")]
    ShapeMismatch { name: String, got: usize, want: usize },
    #[error("index {index:?} out of bounds for `{name}` of shape {shape:?}")]
    OutOfBounds {
        name: String,
        index: Vec<i64>,
        shape: Vec<u64>,
    },
    #[error("pop from empty stream `{0}` (unbalanced producer/consumer)")]
    PopEmpty(String),
    #[error("type error in `{context}`: {message}")]
    Type { context: String, message: String },
    #[error("unbound reference `{0}` in expression")]
    UnboundRef(String),
    #[error("memlet subset is not a single element: `{0}`")]
    NonScalarAccess(String),
    #[error("step limit of {0} exceeded (livelock suspicion)")]
    StepLimit(u64),
    #[error("stream capacity must be >= 1 (stream `{0}`)")]
    BadCapacity(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("control-flow transition limit exceeded")]
    TransitionLimit,
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

/// A runtime scalar or vector value. Float arithmetic happens in the declared
/// precision: f32 operands stay f32.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i128),
    F32(f32),
    F64(f64),
    Vector(Vec<Value>),
}

impl Value {
    pub fn zero_of(elem: ElementType) -> Value {
        match elem {
            ElementType::Scalar(s) => Value::zero_scalar(s),
            ElementType::Vector { base, width } => {
                Value::Vector(vec![Value::zero_scalar(base); width as usize])
            }
        }
    }

    fn zero_scalar(s: ScalarType) -> Value {
        match s {
            ScalarType::F32 => Value::F32(0.0),
            ScalarType::F64 => Value::F64(0.0),
            ScalarType::I32 | ScalarType::I64 => Value::Int(0),
        }
    }

    pub fn as_int(&self) -> Option<i128> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::F32(v) => Some(*v as f64),
            Value::F64(v) => Some(*v),
            Value::Vector(_) => None,
        }
    }

    fn truthy(&self) -> Result<bool, SimError> {
        match self {
            Value::Int(v) => Ok(*v != 0),
            other => Err(SimError::Type {
                context: "condition".into(),
                message: format!("expected integer condition, got {other:?}"),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Tensors and the store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(scalar: ScalarType, len: usize) -> TensorData {
        match scalar {
            ScalarType::F32 => TensorData::F32(vec![0.0; len]),
            ScalarType::F64 => TensorData::F64(vec![0.0; len]),
            ScalarType::I32 => TensorData::I32(vec![0; len]),
            ScalarType::I64 => TensorData::I64(vec![0; len]),
        }
    }

    pub fn scalar_type(&self) -> ScalarType {
        match self {
            TensorData::F32(_) => ScalarType::F32,
            TensorData::F64(_) => ScalarType::F64,
            TensorData::I32(_) => ScalarType::I32,
            TensorData::I64(_) => ScalarType::I64,
        }
    }

    fn get(&self, i: usize) -> Value {
        match self {
            TensorData::F32(v) => Value::F32(v[i]),
            TensorData::F64(v) => Value::F64(v[i]),
            TensorData::I32(v) => Value::Int(v[i] as i128),
            TensorData::I64(v) => Value::Int(v[i] as i128),
        }
    }

    fn set(&mut self, i: usize, value: &Value) -> Result<(), SimError> {
        let type_err = |want: &str, got: &Value| SimError::Type {
            context: "tensor store".into(),
            message: format!("expected {want}, got {got:?}"),
        };
        match self {
            TensorData::F32(v) => {
                v[i] = match value {
                    Value::F32(x) => *x,
                    Value::Int(x) => *x as f32,
                    Value::F64(x) => *x as f32,
                    other => return Err(type_err("f32", other)),
                }
            }
            TensorData::F64(v) => {
                v[i] = match value {
                    Value::F64(x) => *x,
                    Value::F32(x) => *x as f64,
                    Value::Int(x) => *x as f64,
                    other => return Err(type_err("f64", other)),
                }
            }
            TensorData::I32(v) => {
                v[i] = match value {
                    Value::Int(x) => *x as i32,
                    other => return Err(type_err("i32", other)),
                }
            }
            TensorData::I64(v) => {
                v[i] = match value {
                    Value::Int(x) => *x as i64,
                    other => return Err(type_err("i64", other)),
                }
            }
        }
        Ok(())
    }
}

/// A dense tensor: logical shape, element lane width, flat base-scalar data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub width: u32,
    pub data: TensorData,
}

impl Tensor {
    pub fn zeros(elem: ElementType, shape: Vec<u64>) -> Tensor {
        let count: u64 = shape.iter().product::<u64>().max(1);
        Tensor {
            width: elem.width(),
            data: TensorData::zeros(elem.base(), (count * elem.width() as u64) as usize),
            shape,
        }
    }

    pub fn from_f32(shape: Vec<u64>, values: Vec<f32>) -> Tensor {
        Tensor {
            shape,
            width: 1,
            data: TensorData::F32(values),
        }
    }

    pub fn from_f64(shape: Vec<u64>, values: Vec<f64>) -> Tensor {
        Tensor {
            shape,
            width: 1,
            data: TensorData::F64(values),
        }
    }

    pub fn from_i64(shape: Vec<u64>, values: Vec<i64>) -> Tensor {
        Tensor {
            shape,
            width: 1,
            data: TensorData::I64(values),
        }
    }

    /// Logical element count (vector elements count once).
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product::<u64>().max(1)
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::I64(v) => v.iter().map(|x| *x as f64).collect(),
        }
    }

    fn flat_index(&self, name: &str, index: &[i64]) -> Result<usize, SimError> {
        if index.len() != self.shape.len() {
            return Err(SimError::OutOfBounds {
                name: name.into(),
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut flat: u64 = 0;
        for (i, (&idx, &dim)) in index.iter().zip(&self.shape).enumerate() {
            if idx < 0 || idx as u64 >= dim {
                return Err(SimError::OutOfBounds {
                    name: name.into(),
                    index: index.to_vec(),
                    shape: self.shape.clone(),
                });
            }
            let _ = i;
            flat = flat * dim + idx as u64;
        }
        Ok(flat as usize)
    }

    /// Reads the logical element at `index` (a vector value when width > 1).
    pub fn read(&self, name: &str, index: &[i64]) -> Result<Value, SimError> {
        let flat = self.flat_index(name, index)?;
        if self.width == 1 {
            Ok(self.data.get(flat))
        } else {
            let w = self.width as usize;
            Ok(Value::Vector(
                (0..w).map(|l| self.data.get(flat * w + l)).collect(),
            ))
        }
    }

    pub fn write(
        &mut self,
        name: &str,
        index: &[i64],
        value: &Value,
        wcr: Option<Wcr>,
    ) -> Result<(), SimError> {
        let flat = self.flat_index(name, index)?;
        let w = self.width as usize;
        let lanes: Vec<(usize, Value)> = if w == 1 {
            vec![(flat, value.clone())]
        } else {
            let Value::Vector(items) = value else {
                return Err(SimError::Type {
                    context: format!("write to `{name}`"),
                    message: format!("expected a {w}-lane vector, got {value:?}"),
                });
            };
            if items.len() != w {
                return Err(SimError::Type {
                    context: format!("write to `{name}`"),
                    message: format!("expected {w} lanes, got {}", items.len()),
                });
            }
            items
                .iter()
                .enumerate()
                .map(|(l, v)| (flat * w + l, v.clone()))
                .collect()
        };
        for (i, v) in lanes {
            let new = match wcr {
                None => v,
                Some(op) => combine(op, &self.data.get(i), &v)?,
            };
            self.data.set(i, &new)?;
        }
        Ok(())
    }
}

pub(crate) fn combine(op: Wcr, old: &Value, new: &Value) -> Result<Value, SimError> {
    let err = || SimError::Type {
        context: "write-conflict resolution".into(),
        message: format!("cannot combine {old:?} and {new:?}"),
    };
    Ok(match (old, new) {
        (Value::Int(a), Value::Int(b)) => Value::Int(match op {
            Wcr::Sum => a + b,
            Wcr::Min => *a.min(b),
            Wcr::Max => *a.max(b),
        }),
        (Value::F32(a), Value::F32(b)) => Value::F32(match op {
            Wcr::Sum => a + b,
            Wcr::Min => a.min(*b),
            Wcr::Max => a.max(*b),
        }),
        (Value::F64(a), Value::F64(b)) => Value::F64(match op {
            Wcr::Sum => a + b,
            Wcr::Min => a.min(*b),
            Wcr::Max => a.max(*b),
        }),
        (Value::Vector(a), Value::Vector(b)) if a.len() == b.len() => Value::Vector(
            a.iter()
                .zip(b)
                .map(|(x, y)| combine(op, x, y))
                .collect::<Result<_, _>>()?,
        ),
        // Mixed scalar promotions (an f32 cell combined with an f64 oracle
        // value does not occur; int literals may meet floats).
        (Value::F32(a), Value::Int(b)) => combine(op, &Value::F32(*a), &Value::F32(*b as f32))?,
        (Value::F64(a), Value::Int(b)) => combine(op, &Value::F64(*a), &Value::F64(*b as f64))?,
        _ => return Err(err()),
    })
}

/// Runtime storage: dense tensors plus per-stream FIFO queues (one queue per
/// stream-array instance).
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    pub tensors: BTreeMap<String, Tensor>,
    pub streams: BTreeMap<String, Vec<VecDeque<Value>>>,
}

impl TensorStore {
    pub fn new() -> TensorStore {
        TensorStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, SimError> {
        self.tensors
            .get(name)
            .ok_or_else(|| SimError::UnknownContainer(name.to_string()))
    }

    pub(crate) fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor, SimError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| SimError::UnknownContainer(name.to_string()))
    }

    /// Allocates every container of the graph: tensors zeroed, stream queues
    /// empty. Shapes are evaluated under `binding`.
    pub fn allocate(sdfg: &Sdfg, binding: &SymBinding) -> Result<TensorStore, SimError> {
        let mut store = TensorStore::new();
        for desc in sdfg.containers.values() {
            allocate_container(&mut store, desc, binding)?;
        }
        Ok(store)
    }

    /// Copies provided input tensors over the allocation, checking sizes.
    pub fn load_inputs(&mut self, inputs: &TensorStore) -> Result<(), SimError> {
        for (name, tensor) in &inputs.tensors {
            let slot = self.tensor_mut(name)?;
            if slot.data.len() != tensor.data.len() {
                return Err(SimError::ShapeMismatch {
                    name: name.clone(),
                    got: tensor.data.len(),
                    want: slot.data.len(),
                });
            }
            let width = slot.width;
            let shape = slot.shape.clone();
            *slot = tensor.clone();
            slot.width = width;
            slot.shape = shape;
        }
        Ok(())
    }

    /// Keeps only non-transient containers (the external interface).
    pub fn externals(&self, sdfg: &Sdfg) -> TensorStore {
        let mut out = TensorStore::new();
        for (name, tensor) in &self.tensors {
            if let Some(desc) = sdfg.container(name) {
                if !desc.transient {
                    out.tensors.insert(name.clone(), tensor.clone());
                }
            }
        }
        out
    }

    pub fn queue(&mut self, name: &str, instance: usize) -> Result<&mut VecDeque<Value>, SimError> {
        let queues = self
            .streams
            .get_mut(name)
            .ok_or_else(|| SimError::UnknownContainer(name.to_string()))?;
        queues.get_mut(instance).ok_or_else(|| SimError::OutOfBounds {
            name: name.to_string(),
            index: vec![instance as i64],
            shape: vec![],
        })
    }
}

pub(crate) fn allocate_container(
    store: &mut TensorStore,
    desc: &DataDescriptor,
    binding: &SymBinding,
) -> Result<(), SimError> {
    let mut shape = Vec::with_capacity(desc.shape.len());
    for dim in &desc.shape {
        shape.push(dim.evaluate(binding)?.max(0) as u64);
    }
    match desc.kind {
        ContainerKind::Stream => {
            let count: u64 = shape.iter().product::<u64>().max(1);
            store
                .streams
                .insert(desc.name.clone(), vec![VecDeque::new(); count as usize]);
        }
        ContainerKind::Array | ContainerKind::Scalar => {
            store
                .tensors
                .insert(desc.name.clone(), Tensor::zeros(desc.element, shape));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Expression evaluation
// ---------------------------------------------------------------------------

/// Evaluation context for tasklet bodies, guards, and conditions.
pub(crate) struct EvalCtx<'a> {
    pub connectors: BTreeMap<String, Value>,
    pub binding: &'a SymBinding,
    pub constants: &'a [crate::ir::ConstTable],
    /// Float literals become f32 when the surrounding computation is f32.
    pub f32_literals: bool,
}

impl<'a> EvalCtx<'a> {
    pub fn bare(binding: &'a SymBinding) -> EvalCtx<'a> {
        EvalCtx {
            connectors: BTreeMap::new(),
            binding,
            constants: &[],
            f32_literals: false,
        }
    }
}

pub(crate) fn eval_value(expr: &ValueExpr, ctx: &EvalCtx) -> Result<Value, SimError> {
    use crate::ir::{BinOp, CmpOp};
    Ok(match expr {
        ValueExpr::Int(v) => Value::Int(*v),
        ValueExpr::Float(v) => {
            if ctx.f32_literals {
                Value::F32(*v as f32)
            } else {
                Value::F64(*v)
            }
        }
        ValueExpr::Ref(name) => {
            if let Some(v) = ctx.connectors.get(name) {
                v.clone()
            } else if let Ok(v) = ctx.binding.get(name) {
                Value::Int(v)
            } else {
                return Err(SimError::UnboundRef(name.clone()));
            }
        }
        ValueExpr::Bin(op, a, b) => {
            let a = eval_value(a, ctx)?;
            let b = eval_value(b, ctx)?;
            binary(*op, &a, &b)?
        }
        ValueExpr::Neg(a) => match eval_value(a, ctx)? {
            Value::Int(v) => Value::Int(-v),
            Value::F32(v) => Value::F32(-v),
            Value::F64(v) => Value::F64(-v),
            Value::Vector(items) => Value::Vector(
                items
                    .into_iter()
                    .map(|v| {
                        eval_value(&ValueExpr::Neg(Box::new(value_literal(&v))), ctx)
                    })
                    .collect::<Result<_, _>>()?,
            ),
        },
        ValueExpr::Cmp(op, a, b) => {
            let a = eval_value(a, ctx)?;
            let b = eval_value(b, ctx)?;
            let lt_gt = |o: std::cmp::Ordering| match op {
                CmpOp::Eq => o.is_eq(),
                CmpOp::Ne => o.is_ne(),
                CmpOp::Lt => o.is_lt(),
                CmpOp::Le => o.is_le(),
                CmpOp::Gt => o.is_gt(),
                CmpOp::Ge => o.is_ge(),
            };
            let result = match (&a, &b) {
                (Value::Int(x), Value::Int(y)) => lt_gt(x.cmp(y)),
                _ => {
                    let (x, y) = (
                        a.as_f64().ok_or_else(|| SimError::Type {
                            context: "comparison".into(),
                            message: "vector comparison".into(),
                        })?,
                        b.as_f64().ok_or_else(|| SimError::Type {
                            context: "comparison".into(),
                            message: "vector comparison".into(),
                        })?,
                    );
                    lt_gt(x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Greater))
                }
            };
            Value::Int(result as i128)
        }
        ValueExpr::Not(a) => Value::Int(!eval_value(a, ctx)?.truthy()? as i128),
        ValueExpr::And(a, b) => {
            Value::Int((eval_value(a, ctx)?.truthy()? && eval_value(b, ctx)?.truthy()?) as i128)
        }
        ValueExpr::Or(a, b) => {
            Value::Int((eval_value(a, ctx)?.truthy()? || eval_value(b, ctx)?.truthy()?) as i128)
        }
        ValueExpr::Select(c, a, b) => {
            if eval_value(c, ctx)?.truthy()? {
                eval_value(a, ctx)?
            } else {
                eval_value(b, ctx)?
            }
        }
        ValueExpr::Lane(v, i) => {
            let idx = eval_value(i, ctx)?.as_int().ok_or_else(|| SimError::Type {
                context: "lane".into(),
                message: "lane index must be an integer".into(),
            })? as usize;
            match eval_value(v, ctx)? {
                Value::Vector(items) => items.get(idx).cloned().ok_or(SimError::Type {
                    context: "lane".into(),
                    message: format!("lane {idx} out of range"),
                })?,
                scalar if idx == 0 => scalar,
                _ => {
                    return Err(SimError::Type {
                        context: "lane".into(),
                        message: "lane of a scalar".into(),
                    })
                }
            }
        }
        ValueExpr::Pack(items) => Value::Vector(
            items
                .iter()
                .map(|e| eval_value(e, ctx))
                .collect::<Result<_, _>>()?,
        ),
        ValueExpr::ConstRef(name, idx) => {
            let table = ctx
                .constants
                .iter()
                .find(|t| t.name == *name)
                .ok_or_else(|| SimError::UnboundRef(name.clone()))?;
            let mut flat: i128 = 0;
            for (e, dim) in idx.iter().zip(&table.shape) {
                let i = eval_value(e, ctx)?.as_int().ok_or_else(|| SimError::Type {
                    context: "constant lookup".into(),
                    message: "index must be an integer".into(),
                })?;
                if i < 0 || i as u64 >= *dim {
                    return Err(SimError::OutOfBounds {
                        name: name.clone(),
                        index: vec![i as i64],
                        shape: table.shape.clone(),
                    });
                }
                flat = flat * *dim as i128 + i;
            }
            match &table.data {
                ConstData::Float(v) => {
                    let x = v[flat as usize];
                    if ctx.f32_literals {
                        Value::F32(x as f32)
                    } else {
                        Value::F64(x)
                    }
                }
                ConstData::Int(v) => Value::Int(v[flat as usize] as i128),
            }
        }
    })
}

fn value_literal(v: &Value) -> ValueExpr {
    match v {
        Value::Int(x) => ValueExpr::Int(*x),
        Value::F32(x) => ValueExpr::Float(*x as f64),
        Value::F64(x) => ValueExpr::Float(*x),
        Value::Vector(_) => unreachable!("nested vectors cannot appear"),
    }
}

fn binary(op: crate::ir::BinOp, a: &Value, b: &Value) -> Result<Value, SimError> {
    use crate::ir::BinOp;
    let type_err = || SimError::Type {
        context: "arithmetic".into(),
        message: format!("cannot apply {op:?} to {a:?} and {b:?}"),
    };
    // Vector broadcasting: vector (+) vector elementwise, scalar broadcasts.
    match (a, b) {
        (Value::Vector(x), Value::Vector(y)) => {
            if x.len() != y.len() {
                return Err(type_err());
            }
            return Ok(Value::Vector(
                x.iter()
                    .zip(y)
                    .map(|(u, v)| binary(op, u, v))
                    .collect::<Result<_, _>>()?,
            ));
        }
        (Value::Vector(x), scalar) => {
            return Ok(Value::Vector(
                x.iter()
                    .map(|u| binary(op, u, scalar))
                    .collect::<Result<_, _>>()?,
            ));
        }
        (scalar, Value::Vector(y)) => {
            return Ok(Value::Vector(
                y.iter()
                    .map(|v| binary(op, scalar, v))
                    .collect::<Result<_, _>>()?,
            ));
        }
        _ => {}
    }
    Ok(match (a, b) {
        (Value::Int(x), Value::Int(y)) => match op {
            BinOp::Add => Value::Int(x.checked_add(*y).ok_or(SymError::Overflow).map_err(SimError::from)?),
            BinOp::Sub => Value::Int(x.checked_sub(*y).ok_or(SymError::Overflow).map_err(SimError::from)?),
            BinOp::Mul => Value::Int(x.checked_mul(*y).ok_or(SymError::Overflow).map_err(SimError::from)?),
            BinOp::Div => {
                if *y == 0 {
                    return Err(SymError::DivisionByZero.into());
                }
                Value::Int(crate::symbolic::div_floor(*x, *y))
            }
            BinOp::Mod => {
                if *y == 0 {
                    return Err(SymError::DivisionByZero.into());
                }
                Value::Int(crate::symbolic::mod_floor(*x, *y))
            }
        },
        (Value::F32(_), _) | (_, Value::F32(_)) => {
            let x = a.as_f64().ok_or_else(type_err)? as f32;
            let y = b.as_f64().ok_or_else(type_err)? as f32;
            Value::F32(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Mod => x % y,
            })
        }
        _ => {
            let x = a.as_f64().ok_or_else(type_err)?;
            let y = b.as_f64().ok_or_else(type_err)?;
            Value::F64(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Mod => x % y,
            })
        }
    })
}

/// Evaluates a subset expected to address a single element; returns the
/// per-dimension indices.
pub(crate) fn point_indices(
    name: &str,
    subset: &[RangeExpr],
    binding: &SymBinding,
) -> Result<Vec<i64>, SimError> {
    let mut out = Vec::with_capacity(subset.len());
    for range in subset {
        let begin = range.begin.evaluate(binding)?;
        let end = range.end.evaluate(binding)?;
        if begin != end {
            return Err(SimError::NonScalarAccess(name.to_string()));
        }
        out.push(begin as i64);
    }
    Ok(out)
}

/// Flat stream-array instance index for a subset point.
pub(crate) fn stream_instance(
    desc: &DataDescriptor,
    subset: &[RangeExpr],
    binding: &SymBinding,
) -> Result<usize, SimError> {
    if subset.is_empty() {
        return Ok(0);
    }
    let idx = point_indices(&desc.name, subset, binding)?;
    let mut shape = Vec::with_capacity(desc.shape.len());
    for dim in &desc.shape {
        shape.push(dim.evaluate(binding)?.max(0) as u64);
    }
    let mut flat: u64 = 0;
    for (&i, &dim) in idx.iter().zip(&shape) {
        if i < 0 || i as u64 >= dim {
            return Err(SimError::OutOfBounds {
                name: desc.name.clone(),
                index: idx.clone(),
                shape,
            });
        }
        flat = flat * dim + i as u64;
    }
    Ok(flat as usize)
}
