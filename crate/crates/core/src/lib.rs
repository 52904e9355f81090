//! Core of the FAIR artifact system.
//!
//! * [`interchange`]: the framework-neutral computational graph format.
//! * [`converters`]: checkpoint frontends (`pt`, `tf`) that emit interchange graphs.
//! * [`runtime`]: a deterministic interpreter for interchange graphs.
//! * [`registry`]: content-addressed artifact storage with metadata, search and credentials.
//! * [`tasks`]: four-section task configuration documents and the dispatcher.
//! * [`sandbox`]: manifest-driven reproducible project runs.

pub mod converters;
pub mod digest;
pub mod interchange;
pub mod registry;
pub mod runtime;
pub mod sandbox;
pub mod tasks;

pub use interchange::{DType, GraphNode, InterchangeGraph, OpType, Tensor, TensorData, ValidationReport};
