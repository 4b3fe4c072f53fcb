//! Library nodes: abstract operators embedded in the dataflow graph, plus the
//! registry of expansions that lower them into concrete subgraphs, possibly
//! specialized for the capabilities of a hardware target.

mod blas;
mod registry;
pub mod stencil_buffers;
mod stencil_expand;
mod systolic;

pub use registry::{expand_all, expand_node, expansions_for, library_node_count, ExpandError, ExpansionInfo};
pub use stencil_buffers::{stencil_offsets, OffsetTable};

use serde::{Deserialize, Serialize};

use crate::ir::ValueExpr;

/// Default length of the partial-sum buffer used by reduction interleaving.
pub const DEFAULT_PARTIAL_SUM_LEN: u32 = 8;
/// Modeled latency of a floating-point add; the partial-sum buffer must be
/// strictly longer than this.
pub const DEFAULT_ADD_LATENCY: u32 = 5;

/// Scaling factor of an operation: a literal or a named integer symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha {
    Literal(f64),
    Symbol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tiling {
    RowMajor,
    ColumnTiles,
}

/// Stencil input: relative access offsets into a grid input, or a scalar
/// parameter when `offsets` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilInput {
    pub name: String,
    /// One entry per access point; each is a per-dimension relative offset.
    #[serde(default)]
    pub offsets: Vec<Vec<i64>>,
    /// Constant boundary fill value for out-of-range accesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,
}

/// Attributes of an abstract stencil operator. The computation references
/// access point `k` of input `a` as `a__k`, and scalar inputs by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilSpec {
    pub dims: Vec<u64>,
    pub inputs: Vec<StencilInput>,
    pub output: String,
    pub computation: ValueExpr,
}

impl StencilSpec {
    pub fn input(&self, name: &str) -> Option<&StencilInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// Grid (non-scalar) inputs.
    pub fn grid_inputs(&self) -> impl Iterator<Item = &StencilInput> {
        self.inputs.iter().filter(|i| !i.offsets.is_empty())
    }

    /// Connector name of access point `k` of a grid input.
    pub fn access_ref(input: &str, k: usize) -> String {
        format!("{input}__{k}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LibraryNodeKind {
    /// `z = alpha * x + y`. Connectors: in `x`, `y`; out `z`.
    Axpy { alpha: Alpha },
    /// `r = sum(x * y)`. Connectors: in `x`, `y`; out `r`.
    Dot {
        /// Partial-sum buffer length (L). Must exceed `add_latency`.
        partial_sum_len: u32,
        /// Modeled add latency the buffer has to cover.
        add_latency: u32,
        /// Reduce phase as a W-1 adder tree; `false` selects the
        /// resource-constrained single-adder variant.
        tree_reduce: bool,
    },
    /// `y = A * x` (or `A^T * x`). Connectors: in `A`, `x`; out `y`.
    Gemv {
        transposed: bool,
        tiling: Tiling,
        /// Column-tile width for the `ColumnTiles` scheme.
        tile_size: u32,
    },
    /// Rank-1 update `A_out = A + x * y^T`. Connectors: in `A`, `x`, `y`;
    /// out `A_out`. The tiling fixes the iteration (and thus output) order.
    Ger { tiling: Tiling, tile_size: u32 },
    /// Rank-dispatching multiplication. Connectors: in `A`, `B`; out `C`.
    MatMul,
    /// `C = A * B`. Connectors: in `A`, `B`; out `C`.
    Gemm {
        /// When set, expand as a 1-D systolic array of this many elements.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        systolic_p: Option<u32>,
    },
    /// Sliding-window computation over grid inputs.
    Stencil(StencilSpec),
}

impl LibraryNodeKind {
    pub fn dot() -> LibraryNodeKind {
        LibraryNodeKind::Dot {
            partial_sum_len: DEFAULT_PARTIAL_SUM_LEN,
            add_latency: DEFAULT_ADD_LATENCY,
            tree_reduce: true,
        }
    }

    /// Fixed input connector names for this kind.
    pub fn input_connectors(&self) -> Vec<String> {
        match self {
            LibraryNodeKind::Axpy { .. } => vec!["x".into(), "y".into()],
            LibraryNodeKind::Dot { .. } => vec!["x".into(), "y".into()],
            LibraryNodeKind::Gemv { .. } => vec!["A".into(), "x".into()],
            LibraryNodeKind::Ger { .. } => vec!["A".into(), "x".into(), "y".into()],
            LibraryNodeKind::MatMul | LibraryNodeKind::Gemm { .. } => {
                vec!["A".into(), "B".into()]
            }
            LibraryNodeKind::Stencil(spec) => {
                spec.inputs.iter().map(|i| i.name.clone()).collect()
            }
        }
    }

    /// Fixed output connector names for this kind.
    pub fn output_connectors(&self) -> Vec<String> {
        match self {
            LibraryNodeKind::Axpy { .. } => vec!["z".into()],
            LibraryNodeKind::Dot { .. } => vec!["r".into()],
            LibraryNodeKind::Gemv { .. } => vec!["y".into()],
            LibraryNodeKind::Ger { .. } => vec!["A_out".into()],
            LibraryNodeKind::MatMul | LibraryNodeKind::Gemm { .. } => vec!["C".into()],
            LibraryNodeKind::Stencil(spec) => vec![spec.output.clone()],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LibraryNodeKind::Axpy { .. } => "axpy",
            LibraryNodeKind::Dot { .. } => "dot",
            LibraryNodeKind::Gemv { .. } => "gemv",
            LibraryNodeKind::Ger { .. } => "ger",
            LibraryNodeKind::MatMul => "matmul",
            LibraryNodeKind::Gemm { .. } => "gemm",
            LibraryNodeKind::Stencil(_) => "stencil",
        }
    }
}

/// An abstract operator node: behavior without a chosen implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryNode {
    /// Instance name; used to derive names of expansion-internal containers.
    pub name: String,
    #[serde(flatten)]
    pub kind: LibraryNodeKind,
    /// Vectorization width; expansions use it to control unrolling and
    /// accumulation factors.
    #[serde(default = "default_width")]
    pub width: u32,
}

fn default_width() -> u32 {
    1
}

impl LibraryNode {
    pub fn new(name: impl Into<String>, kind: LibraryNodeKind) -> LibraryNode {
        LibraryNode {
            name: name.into(),
            kind,
            width: 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Target capabilities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeStyle {
    /// Processing elements are functions inside one top-level region.
    FunctionDataflow,
    /// One kernel per processing element, all launched from the host.
    KernelPerPe,
}

/// What a hardware target supports; drives expansion selection and the
/// default emission dialect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCapabilities {
    pub name: String,
    pub native_f32_accumulation: bool,
    pub native_f64_accumulation: bool,
    pub shift_registers: bool,
    pub pe_style: PeStyle,
}

impl TargetCapabilities {
    /// Preset: PEs as functions in a dataflow region; no native float
    /// accumulation, no shift registers.
    pub fn func_dataflow() -> TargetCapabilities {
        TargetCapabilities {
            name: "func-dataflow".to_string(),
            native_f32_accumulation: false,
            native_f64_accumulation: false,
            shift_registers: false,
            pe_style: PeStyle::FunctionDataflow,
        }
    }

    /// Preset: one kernel per PE; native f32 accumulation and shift
    /// registers available.
    pub fn kernel_per_pe() -> TargetCapabilities {
        TargetCapabilities {
            name: "kernel-per-pe".to_string(),
            native_f32_accumulation: true,
            native_f64_accumulation: false,
            shift_registers: true,
            pe_style: PeStyle::KernelPerPe,
        }
    }

    pub fn preset(name: &str) -> Option<TargetCapabilities> {
        match name {
            "func-dataflow" => Some(TargetCapabilities::func_dataflow()),
            "kernel-per-pe" => Some(TargetCapabilities::kernel_per_pe()),
            _ => None,
        }
    }

    pub fn native_accumulation(&self, scalar: crate::ir::ScalarType) -> bool {
        match scalar {
            crate::ir::ScalarType::F32 => self.native_f32_accumulation,
            crate::ir::ScalarType::F64 => self.native_f64_accumulation,
            // Integer accumulation has no loop-carried latency issue.
            _ => true,
        }
    }
}
