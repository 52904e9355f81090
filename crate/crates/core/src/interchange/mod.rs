//! Framework-neutral computational graph format.
//!
//! Every converted model is expressed as an [`InterchangeGraph`]: named tensors
//! flowing through nodes drawn from a fixed operator set, with weights stored
//! as initializers. The module covers structural validation, deterministic
//! topological ordering, shape inference, the canonical text encoding and
//! graph composition.

mod compose;
mod graph;
mod serial;
mod shape;
mod tensor;

pub use compose::{compose_graphs, positional_binding};
pub use graph::{topo_sort, validate_graph, AttrKind, AttrValue, GraphNode, InterchangeGraph, OpType, ValidationReport};
pub use serial::{decode_tensor, encode_tensor, parse_graph, parse_tensors, serialize_graph, serialize_tensors};
pub use shape::{infer_declared, infer_shapes, node_output_shape, normalize_axis, ShapeMap};
pub use tensor::{element_count, DType, Tensor, TensorData};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("malformed interchange document: {0}")]
    Malformed(String),
    #[error("unknown operator {0:?}")]
    UnknownOp(String),
    #[error("interchange document has no ir_version")]
    MissingIrVersion,
    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("dependency cycle through node {node}")]
    Cycle { node: String },
    #[error("shape mismatch at node {node}: expected {expected}, got {actual}")]
    ShapeMismatch { node: String, expected: String, actual: String },
    #[error("no shape given for graph input {0}")]
    MissingInput(String),
    #[error("invalid binding: {0}")]
    Binding(String),
    #[error("producer output {output} {actual} is incompatible with consumer input {input} {expected}")]
    Incompatible { output: String, input: String, expected: String, actual: String },
    #[error("name collision after prefixing: {0}")]
    NameCollision(String),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::Malformed(_) => "malformed_graph",
            GraphError::UnknownOp(_) => "unknown_operator",
            GraphError::MissingIrVersion => "missing_ir_version",
            GraphError::Invalid(_) => "invalid_graph",
            GraphError::Cycle { .. } => "graph_cycle",
            GraphError::ShapeMismatch { .. } => "shape_mismatch",
            GraphError::MissingInput(_) => "missing_input",
            GraphError::Binding(_) => "binding_error",
            GraphError::Incompatible { .. } => "shape_incompatible",
            GraphError::NameCollision(_) => "name_collision",
        }
    }
}
