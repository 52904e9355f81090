//! Checkpoint frontends.
//!
//! Two framework-style checkpoint formats are understood:
//!
//! | backend | format tag   | layout                          | linear convention |
//! |---------|--------------|---------------------------------|-------------------|
//! | `pt`    | `pt-ckpt-v1` | ordered layer list              | `y = x . W^T + b` |
//! | `tf`    | `tf-ckpt-v1` | named layer DAG with inbound refs | `y = x . K + b`   |
//!
//! Both normalize to the interchange orientation (`MatMul(x, [in, out])`
//! followed by `Add` with a `[1, out]` bias), so the runtime never needs to
//! know where a graph came from.

mod layerdag;
mod sequential;
mod task;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::interchange::{GraphError, InterchangeGraph};

pub use layerdag::{convert_layerdag, DagAttrs, DagInput, DagNode, DagOp, DenseParams, LayerDagCheckpoint, LAYERDAG_TAG};
pub use sequential::{convert_sequential, SequentialCheckpoint, SequentialLayer, SEQUENTIAL_TAG};
pub use task::run_conversion_task;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvertError {
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error("checkpoint format_tag must be {expected:?}, found {found:?}")]
    FormatTag { expected: &'static str, found: String },
    #[error("checkpoint has no layers")]
    NoLayers,
    #[error("checkpoint has no linear layer and no input_dim, so its input width is unknown")]
    NoInputWidth,
    #[error("layer {layer} expects input width {found} but the previous layer produces {expected}")]
    DimensionChain { layer: usize, expected: usize, found: usize },
    #[error("weight/bias mismatch: {0}")]
    WeightBias(String),
    #[error("{node} references unknown layer or input {reference:?}")]
    UnresolvedReference { node: String, reference: String },
    #[error("layer graph has a cycle through {0}")]
    Cycle(String),
    #[error("wrong inbound count: {0}")]
    Arity(String),
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("unknown backend {0:?} (expected \"pt\" or \"tf\")")]
    UnknownBackend(String),
    #[error("converted graph is invalid: {0}")]
    Graph(#[from] GraphError),
}

impl ConvertError {
    pub fn code(&self) -> &'static str {
        match self {
            ConvertError::UnknownBackend(_) => "unknown_backend",
            ConvertError::Graph(e) => e.code(),
            _ => "invalid_checkpoint",
        }
    }
}

pub(crate) fn check_model_name(name: &str) -> Result<(), ConvertError> {
    if name.is_empty() || name.contains('/') {
        return Err(ConvertError::InvalidName(format!("model name {name:?} must be non-empty and contain no '/'")));
    }
    Ok(())
}

/// Checkpoint backends with a converter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backend {
    Pt,
    Tf,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Pt => "pt",
            Backend::Tf => "tf",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = ConvertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pt" => Ok(Backend::Pt),
            "tf" => Ok(Backend::Tf),
            other => Err(ConvertError::UnknownBackend(other.to_string())),
        }
    }
}

/// Parses checkpoint bytes in `backend`'s format and converts them.
pub fn convert_checkpoint(
    backend: Backend,
    bytes: &[u8],
    model_name: &str,
    ir_version: i64,
) -> Result<InterchangeGraph, ConvertError> {
    match backend {
        Backend::Pt => convert_sequential(&SequentialCheckpoint::parse(bytes)?, model_name, ir_version),
        Backend::Tf => convert_layerdag(&LayerDagCheckpoint::parse(bytes)?, model_name, ir_version),
    }
}
