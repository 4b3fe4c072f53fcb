//! A compiler toolkit for streaming dataflow graphs.
//!
//! Programs are represented as a control-flow graph of *states*, each holding
//! a pure dataflow multigraph of access nodes, tasklets, map scopes, and
//! abstract library operators. The crate provides:
//!
//! - [`symbolic`]: exact integer expression algebra for volumes and ranges;
//! - [`ir`]: the graph data model, structural validation, and JSON
//!   serialization;
//! - [`analysis`]: processing-element enumeration, off-chip data-movement
//!   accounting, stream balance, and reachability;
//! - [`library`]: abstract operator nodes and their target-specialized
//!   expansions into concrete subgraphs;
//! - [`transforms`]: graph-rewriting passes (device offload, streaming memory
//!   extraction, pipeline fusion, vectorization, constant folding) and the
//!   ordered auto-optimization driver;
//! - [`sim`]: a sequential reference interpreter and a concurrent bounded-FIFO
//!   simulator with deadlock diagnosis;
//! - [`codegen`]: structured HLS-style source emission in two dialects;
//! - [`stencil`]: a JSON stencil DSL frontend with delay-buffer planning.
//!
//! With the default `parallel` feature, batch analyses and searches use a
//! work-stealing thread pool; disabling the feature compiles the same entry
//! points down to sequential loops.

pub mod analysis;
pub mod codegen;
pub mod fixtures;
pub mod ir;
pub mod library;
pub(crate) mod par;
pub mod sim;
pub mod stencil;
pub mod symbolic;
pub mod transforms;
