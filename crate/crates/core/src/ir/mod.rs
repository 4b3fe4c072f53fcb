//! The dataflow graph data model: a control-flow graph of states, each
//! holding a pure-dataflow multigraph of access nodes, tasklets, map scopes,
//! library nodes, and nested graphs, with data movement annotated on edges.

pub mod build;
pub mod expr;
pub mod path;
mod serial;
mod validate;

pub use expr::{parse_value_expr, BinOp, CmpOp, ExprError, ValueExpr};
pub use serial::{load, load_from_value, save, save_to_value, LoadWarning, SCHEMA_VERSION};
pub use validate::{has_errors, validate, Diagnostic, Severity};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::LibraryNode;
use crate::symbolic::SymExpr;

/// FIFO depth used when a stream container does not specify one.
pub const DEFAULT_STREAM_CAPACITY: u32 = 4;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("schema version mismatch: found `{found}`, supported `{supported}`")]
    SchemaVersion { found: String, supported: String },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("duplicate container `{0}`")]
    DuplicateContainer(String),
}

// ---------------------------------------------------------------------------
// Element types and containers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarType {
    F32,
    F64,
    I32,
    I64,
}

impl ScalarType {
    pub fn byte_size(self) -> u64 {
        match self {
            ScalarType::F32 | ScalarType::I32 => 4,
            ScalarType::F64 | ScalarType::I64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

/// Element type of a container. Vectors of vectors cannot be represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementType {
    Scalar(ScalarType),
    Vector { base: ScalarType, width: u32 },
}

impl ElementType {
    pub const F32: ElementType = ElementType::Scalar(ScalarType::F32);
    pub const F64: ElementType = ElementType::Scalar(ScalarType::F64);
    pub const I32: ElementType = ElementType::Scalar(ScalarType::I32);
    pub const I64: ElementType = ElementType::Scalar(ScalarType::I64);

    pub fn vector(base: ScalarType, width: u32) -> ElementType {
        ElementType::Vector { base, width }
    }

    pub fn base(self) -> ScalarType {
        match self {
            ElementType::Scalar(s) => s,
            ElementType::Vector { base, .. } => base,
        }
    }

    /// Lane count; 1 for scalars.
    pub fn width(self) -> u32 {
        match self {
            ElementType::Scalar(_) => 1,
            ElementType::Vector { width, .. } => width,
        }
    }

    pub fn byte_size(self) -> u64 {
        self.base().byte_size() * self.width() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    HostDram,
    DeviceDram,
    OnChipLocal,
    OnChipRegister,
    ShiftRegister,
}

impl StorageKind {
    /// Off-chip, memory-mapped storage.
    pub fn is_dram(self) -> bool {
        matches!(self, StorageKind::HostDram | StorageKind::DeviceDram)
    }

    /// Storage reachable from device kernels.
    pub fn on_device(self) -> bool {
        !matches!(self, StorageKind::HostDram)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Array,
    Stream,
    Scalar,
}

/// A named data container: array, stream, or scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDescriptor {
    pub name: String,
    pub kind: ContainerKind,
    pub element: ElementType,
    /// Dimensions; empty for scalars. Streams may carry a shape, making them
    /// arrays of streams.
    #[serde(default)]
    pub shape: Vec<SymExpr>,
    pub storage: StorageKind,
    /// FIFO depth; streams only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    /// Not part of the program's external interface when true.
    #[serde(default)]
    pub transient: bool,
    /// Manual memory-bank attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<u32>,
    /// Unknown attributes tolerated (and preserved) by the loader.
    #[serde(default, flatten, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, serde_json::Value>,
}

impl DataDescriptor {
    pub fn array(
        name: impl Into<String>,
        element: ElementType,
        shape: Vec<SymExpr>,
    ) -> DataDescriptor {
        DataDescriptor {
            name: name.into(),
            kind: ContainerKind::Array,
            element,
            shape,
            storage: StorageKind::HostDram,
            capacity: None,
            transient: false,
            bank: None,
            extra: IndexMap::new(),
        }
    }

    pub fn scalar(name: impl Into<String>, element: ElementType) -> DataDescriptor {
        DataDescriptor {
            name: name.into(),
            kind: ContainerKind::Scalar,
            element,
            shape: Vec::new(),
            storage: StorageKind::HostDram,
            capacity: None,
            transient: false,
            bank: None,
            extra: IndexMap::new(),
        }
    }

    pub fn stream(
        name: impl Into<String>,
        element: ElementType,
        shape: Vec<SymExpr>,
    ) -> DataDescriptor {
        DataDescriptor {
            name: name.into(),
            kind: ContainerKind::Stream,
            element,
            shape,
            storage: StorageKind::OnChipLocal,
            capacity: Some(DEFAULT_STREAM_CAPACITY),
            transient: true,
            bank: None,
            extra: IndexMap::new(),
        }
    }

    pub fn storage(mut self, storage: StorageKind) -> DataDescriptor {
        self.storage = storage;
        self
    }

    pub fn transient(mut self, transient: bool) -> DataDescriptor {
        self.transient = transient;
        self
    }

    pub fn capacity(mut self, capacity: u32) -> DataDescriptor {
        self.capacity = Some(capacity);
        self
    }

    pub fn bank(mut self, bank: u32) -> DataDescriptor {
        self.bank = Some(bank);
        self
    }

    pub fn is_stream(&self) -> bool {
        self.kind == ContainerKind::Stream
    }

    /// Number of dimensions of the container (0 for scalars).
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total element count under a binding.
    pub fn element_count(
        &self,
        binding: &crate::symbolic::SymBinding,
    ) -> Result<u64, crate::symbolic::SymError> {
        let mut total: u64 = 1;
        for dim in &self.shape {
            total = total.saturating_mul(dim.evaluate(binding)?.max(0) as u64);
        }
        Ok(total)
    }
}

// ---------------------------------------------------------------------------
// Memlets
// ---------------------------------------------------------------------------

/// One dimension of a subset: `begin..=end` with `stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeExpr {
    pub begin: SymExpr,
    pub end: SymExpr,
    pub stride: SymExpr,
}

impl RangeExpr {
    pub fn span(begin: impl Into<SymExpr>, end: impl Into<SymExpr>) -> RangeExpr {
        RangeExpr {
            begin: begin.into(),
            end: end.into(),
            stride: SymExpr::one(),
        }
    }

    pub fn point(at: impl Into<SymExpr>) -> RangeExpr {
        let at = at.into();
        RangeExpr {
            begin: at.clone(),
            end: at,
            stride: SymExpr::one(),
        }
    }

    /// Number of covered indices: `(end - begin) / stride + 1`.
    pub fn count(&self) -> SymExpr {
        let diff = self.end.sub(&self.begin);
        if self.stride.as_int() == Some(1) {
            return diff.add(&SymExpr::one());
        }
        diff.floordiv(&self.stride)
            .expect("range stride must be non-zero")
            .add(&SymExpr::one())
    }

    pub fn is_point(&self) -> bool {
        self.begin == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wcr {
    Sum,
    Min,
    Max,
}

/// Data movement annotation on a dataflow edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memlet {
    pub data: String,
    #[serde(default)]
    pub subset: Vec<RangeExpr>,
    /// Total elements moved over the edge across all executions.
    pub volume: SymExpr,
    #[serde(default)]
    pub dynamic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wcr: Option<Wcr>,
}

impl Memlet {
    pub fn new(data: impl Into<String>, subset: Vec<RangeExpr>) -> Memlet {
        Memlet {
            data: data.into(),
            subset,
            volume: SymExpr::zero(),
            dynamic: false,
            wcr: None,
        }
    }

    /// Single-element subset at the given indices.
    pub fn element(data: impl Into<String>, indices: Vec<SymExpr>) -> Memlet {
        Memlet::new(data, indices.into_iter().map(RangeExpr::point).collect())
    }

    /// Empty subset; for scalar containers and whole-scalar streams.
    pub fn scalar(data: impl Into<String>) -> Memlet {
        Memlet::new(data, Vec::new())
    }

    /// Full-range subset derived from the descriptor's shape.
    pub fn all(desc: &DataDescriptor) -> Memlet {
        Memlet::new(
            desc.name.clone(),
            desc.shape
                .iter()
                .map(|dim| RangeExpr::span(SymExpr::zero(), dim.sub(&SymExpr::one())))
                .collect(),
        )
    }

    pub fn with_wcr(mut self, wcr: Wcr) -> Memlet {
        self.wcr = Some(wcr);
        self
    }

    pub fn with_volume(mut self, volume: SymExpr) -> Memlet {
        self.volume = volume;
        self
    }

    pub fn dynamic(mut self) -> Memlet {
        self.dynamic = true;
        self
    }

    /// Product of per-dimension counts.
    pub fn extent(&self) -> SymExpr {
        let mut total = SymExpr::one();
        for range in &self.subset {
            total = total.mul(&range.count());
        }
        total
    }
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSchedule {
    /// Sequential loop, pipelined in hardware.
    Pipelined,
    /// Parametrically replicated hardware.
    Unrolled,
}

/// Embedded constant table for tasklets whose inputs were folded away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstTable {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: ConstData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstData {
    Float(Vec<f64>),
    Int(Vec<i64>),
}

/// Input connector; a guard makes the read conditional (dynamic memlet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskletInput {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<ValueExpr>,
}

impl TaskletInput {
    pub fn new(name: impl Into<String>) -> TaskletInput {
        TaskletInput {
            name: name.into(),
            guard: None,
        }
    }

    pub fn guarded(name: impl Into<String>, guard: ValueExpr) -> TaskletInput {
        TaskletInput {
            name: name.into(),
            guard: Some(guard),
        }
    }
}

/// Single assignment to an output connector; a guard makes the write
/// conditional (dynamic memlet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assign {
    pub target: String,
    pub value: ValueExpr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<ValueExpr>,
}

impl Assign {
    pub fn new(target: impl Into<String>, value: ValueExpr) -> Assign {
        Assign {
            target: target.into(),
            value,
            guard: None,
        }
    }

    pub fn guarded(target: impl Into<String>, value: ValueExpr, guard: ValueExpr) -> Assign {
        Assign {
            target: target.into(),
            value,
            guard: Some(guard),
        }
    }
}

/// Smallest computation unit. Data is only visible through connected memlets;
/// each output connector is assigned exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tasklet {
    pub name: String,
    pub inputs: Vec<TaskletInput>,
    pub outputs: Vec<String>,
    pub body: Vec<Assign>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constants: Vec<ConstTable>,
}

impl Tasklet {
    /// Parses a body of semicolon-separated `out = expr` assignments.
    pub fn parse(
        name: impl Into<String>,
        inputs: &[&str],
        outputs: &[&str],
        body: &str,
    ) -> Result<Tasklet, ExprError> {
        let mut assigns = Vec::new();
        for stmt in body.split(';') {
            let stmt = stmt.trim();
            if stmt.is_empty() {
                continue;
            }
            let (target, value) = stmt.split_once('=').ok_or_else(|| ExprError::Parse {
                offset: 0,
                message: format!("missing `=` in assignment `{stmt}`"),
            })?;
            assigns.push(Assign::new(target.trim(), parse_value_expr(value.trim())?));
        }
        Ok(Tasklet {
            name: name.into(),
            inputs: inputs.iter().map(|n| TaskletInput::new(*n)).collect(),
            outputs: outputs.iter().map(|n| n.to_string()).collect(),
            body: assigns,
            constants: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Access {
        data: String,
    },
    Tasklet(Tasklet),
    MapEntry {
        params: Vec<String>,
        ranges: Vec<RangeExpr>,
        schedule: MapSchedule,
    },
    MapExit {
        entry: NodeId,
    },
    Library(LibraryNode),
    Nested {
        sdfg: Box<Sdfg>,
        /// Inner symbol name -> outer expression.
        #[serde(default)]
        symbol_map: IndexMap<String, SymExpr>,
        /// Input connector -> inner container.
        #[serde(default)]
        inputs: IndexMap<String, String>,
        /// Output connector -> inner container.
        #[serde(default)]
        outputs: IndexMap<String, String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_conn: Option<String>,
    pub dst: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_conn: Option<String>,
    pub memlet: Memlet,
}

pub type EdgeId = usize;

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// A pure-dataflow multigraph. Node and edge ids are stable: removal leaves
/// tombstones so that ids survive serialization round-trips and rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct State {
    pub name: String,
    pub(crate) nodes: Vec<Option<Node>>,
    pub(crate) edges: Vec<Option<Edge>>,
    #[serde(default, flatten, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, serde_json::Value>,
}

impl State {
    pub fn new(name: impl Into<String>) -> State {
        State {
            name: name.into(),
            ..State::default()
        }
    }

    pub fn add(&mut self, parent: Option<NodeId>, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Some(Node { id, parent, kind }));
        id
    }

    pub fn access(&mut self, parent: Option<NodeId>, data: impl Into<String>) -> NodeId {
        self.add(parent, NodeKind::Access { data: data.into() })
    }

    pub fn tasklet_node(&mut self, parent: Option<NodeId>, tasklet: Tasklet) -> NodeId {
        self.add(parent, NodeKind::Tasklet(tasklet))
    }

    /// Adds a map entry/exit pair under `parent`; returns `(entry, exit)`.
    pub fn map_scope(
        &mut self,
        parent: Option<NodeId>,
        params: Vec<&str>,
        ranges: Vec<RangeExpr>,
        schedule: MapSchedule,
    ) -> (NodeId, NodeId) {
        let entry = self.add(
            parent,
            NodeKind::MapEntry {
                params: params.into_iter().map(String::from).collect(),
                ranges,
                schedule,
            },
        );
        let exit = self.add(parent, NodeKind::MapExit { entry });
        (entry, exit)
    }

    pub fn connect(
        &mut self,
        src: NodeId,
        src_conn: Option<&str>,
        dst: NodeId,
        dst_conn: Option<&str>,
        memlet: Memlet,
    ) -> EdgeId {
        let id = self.edges.len();
        self.edges.push(Some(Edge {
            src,
            src_conn: src_conn.map(String::from),
            dst,
            dst_conn: dst_conn.map(String::from),
            memlet,
        }));
        id
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id.index()]
            .as_ref()
            .expect("reference to removed node")
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id.index()]
            .as_mut()
            .expect("reference to removed node")
    }

    pub fn try_node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index()).and_then(|n| n.as_ref())
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        self.edges[id].as_ref().expect("reference to removed edge")
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> &mut Edge {
        self.edges[id].as_mut().expect("reference to removed edge")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter_map(|n| n.as_ref())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().map(|n| n.id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    pub fn in_edges(&self, node: NodeId) -> Vec<EdgeId> {
        self.edges()
            .filter(|(_, e)| e.dst == node)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn out_edges(&self, node: NodeId) -> Vec<EdgeId> {
        self.edges()
            .filter(|(_, e)| e.src == node)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn remove_edge(&mut self, id: EdgeId) {
        self.edges[id] = None;
    }

    /// Removes a node and all incident edges.
    pub fn remove_node(&mut self, id: NodeId) {
        for slot in self.edges.iter_mut() {
            if let Some(edge) = slot {
                if edge.src == id || edge.dst == id {
                    *slot = None;
                }
            }
        }
        self.nodes[id.index()] = None;
    }

    pub fn live_node_count(&self) -> usize {
        self.nodes().count()
    }

    /// Deterministic topological order (smallest id first among ready nodes).
    /// Returns `Err` with the ids of nodes on a cycle.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, Vec<NodeId>> {
        use std::collections::BTreeSet;
        let mut indegree: IndexMap<NodeId, usize> =
            self.nodes().map(|n| (n.id, 0)).collect();
        for (_, edge) in self.edges() {
            if let Some(d) = indegree.get_mut(&edge.dst) {
                *d += 1;
            }
        }
        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for eid in self.out_edges(next) {
                let dst = self.edge(eid).dst;
                let d = indegree.get_mut(&dst).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(dst);
                }
            }
        }
        if order.len() != indegree.len() {
            let on_cycle = indegree
                .iter()
                .filter(|(id, _)| !order.contains(id))
                .map(|(id, _)| *id)
                .collect();
            return Err(on_cycle);
        }
        Ok(order)
    }

    /// Map entries enclosing `node`, outermost first.
    pub fn scope_chain(&self, node: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut current = self.node(node).parent;
        while let Some(id) = current {
            chain.push(id);
            current = self.node(id).parent;
        }
        chain.reverse();
        chain
    }

    /// The matching exit for a map entry.
    pub fn exit_of(&self, entry: NodeId) -> Option<NodeId> {
        self.nodes()
            .find(|n| matches!(n.kind, NodeKind::MapExit { entry: e } if e == entry))
            .map(|n| n.id)
    }

    /// Containers referenced by any access node or memlet in this state.
    pub fn accessed_containers(&self) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        for node in self.nodes() {
            if let NodeKind::Access { data } = &node.kind {
                out.insert(data.clone());
            }
        }
        for (_, edge) in self.edges() {
            out.insert(edge.memlet.data.clone());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// The top-level graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterStateEdge {
    pub src: StateId,
    pub dst: StateId,
    /// First-match condition; `None` matches unconditionally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ValueExpr>,
    /// Symbol assignments applied when the edge is taken.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub assignments: IndexMap<String, SymExpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sdfg {
    pub name: String,
    /// Free integer symbols (shape parameters, etc.).
    #[serde(default)]
    pub symbols: Vec<String>,
    #[serde(default)]
    pub containers: IndexMap<String, DataDescriptor>,
    pub states: Vec<State>,
    #[serde(default)]
    pub inter_edges: Vec<InterStateEdge>,
    pub start: StateId,
    #[serde(default, flatten, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, serde_json::Value>,
}

impl Sdfg {
    pub fn new(name: impl Into<String>) -> Sdfg {
        Sdfg {
            name: name.into(),
            symbols: Vec::new(),
            containers: IndexMap::new(),
            states: Vec::new(),
            inter_edges: Vec::new(),
            start: StateId(0),
            extra: IndexMap::new(),
        }
    }

    pub fn add_symbol(&mut self, name: impl Into<String>) -> &mut Self {
        let name = name.into();
        if !self.symbols.contains(&name) {
            self.symbols.push(name);
        }
        self
    }

    pub fn add_container(&mut self, desc: DataDescriptor) -> Result<(), IrError> {
        if self.containers.contains_key(&desc.name) {
            return Err(IrError::DuplicateContainer(desc.name));
        }
        self.containers.insert(desc.name.clone(), desc);
        Ok(())
    }

    pub fn container(&self, name: &str) -> Option<&DataDescriptor> {
        self.containers.get(name)
    }

    pub fn add_state(&mut self, name: impl Into<String>) -> StateId {
        let id = StateId(self.states.len() as u32);
        self.states.push(State::new(name));
        id
    }

    pub fn state(&self, id: StateId) -> &State {
        &self.states[id.index()]
    }

    pub fn state_mut(&mut self, id: StateId) -> &mut State {
        &mut self.states[id.index()]
    }

    pub fn state_ids(&self) -> impl Iterator<Item = StateId> {
        (0..self.states.len() as u32).map(StateId)
    }

    pub fn add_inter_edge(&mut self, edge: InterStateEdge) {
        self.inter_edges.push(edge);
    }

    /// Links `src -> dst` unconditionally.
    pub fn link(&mut self, src: StateId, dst: StateId) {
        self.add_inter_edge(InterStateEdge {
            src,
            dst,
            condition: None,
            assignments: IndexMap::new(),
        });
    }

    /// Outgoing inter-state edges of `state` in declaration (first-match) order.
    pub fn out_inter_edges(&self, state: StateId) -> Vec<&InterStateEdge> {
        self.inter_edges.iter().filter(|e| e.src == state).collect()
    }

    /// Stream capacity of a container, falling back to the default.
    pub fn stream_capacity(&self, name: &str) -> u32 {
        self.container(name)
            .and_then(|d| d.capacity)
            .unwrap_or(DEFAULT_STREAM_CAPACITY)
    }

    /// True iff every container accessed in `state` lives on the device.
    pub fn is_device_kernel_state(&self, state: StateId) -> bool {
        self.state(state)
            .accessed_containers()
            .iter()
            .all(|name| match self.container(name) {
                Some(desc) => desc.storage.on_device(),
                None => false,
            })
    }

    /// Non-transient containers (the external interface).
    pub fn external_containers(&self) -> Vec<&DataDescriptor> {
        self.containers.values().filter(|d| !d.transient).collect()
    }

    /// Generates a container name not yet in use, based on `base`.
    pub fn fresh_container_name(&self, base: &str) -> String {
        if !self.containers.contains_key(base) {
            return base.to_string();
        }
        for i in 0.. {
            let candidate = format!("{base}_{i}");
            if !self.containers.contains_key(&candidate) {
                return candidate;
            }
        }
        unreachable!()
    }
}
