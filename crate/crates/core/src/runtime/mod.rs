//! Deterministic interpreter for interchange graphs.
//!
//! Nodes run one at a time in [`topo_sort`](crate::interchange::topo_sort)
//! order with no fusion or rewriting, so identical inputs always produce
//! bit-identical outputs.

mod kernels;
mod task;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::interchange::{parse_tensors, serialize_tensors, DType, GraphError, InterchangeGraph, OpType, Tensor};

pub use kernels::apply_node;
pub use task::run_inference_task;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("missing input tensor {0}")]
    MissingInput(String),
    #[error("input {name} must be {expected}, got {actual}")]
    InputMismatch { name: String, expected: String, actual: String },
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("dtype mismatch at node {node}: {detail}")]
    DTypeMismatch { node: String, detail: String },
    #[error("node {node}: {op} does not support {dtype}")]
    UnsupportedDType { node: String, op: OpType, dtype: DType },
    #[error("node {node}: tensor {tensor} carries no data")]
    MissingData { node: String, tensor: String },
    #[error("node {node} received {inputs} inputs")]
    Arity { node: String, inputs: usize },
    #[error("output {name} declared as {expected} but computed {actual}")]
    OutputMismatch { name: String, expected: String, actual: String },
    #[error("tensor file: {0}")]
    TensorFile(String),
}

impl ExecError {
    pub fn code(&self) -> &'static str {
        match self {
            ExecError::Graph(e) => e.code(),
            ExecError::MissingInput(_) => "missing_input",
            ExecError::InputMismatch { .. } => "input_mismatch",
            ExecError::ShapeMismatch { .. } => "shape_mismatch",
            ExecError::DTypeMismatch { .. } => "dtype_mismatch",
            ExecError::UnsupportedDType { .. } => "unsupported_dtype",
            ExecError::MissingData { .. } => "missing_data",
            ExecError::Arity { .. } => "arity_error",
            ExecError::OutputMismatch { .. } => "output_mismatch",
            ExecError::TensorFile(_) => "invalid_tensor_file",
        }
    }
}

/// Tensors keyed by unique name, each carrying data.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NamedTensorSet {
    entries: BTreeMap<String, Tensor>,
}

impl NamedTensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = Tensor>) -> Result<Self, ExecError> {
        let mut set = Self::new();
        for t in tensors {
            set.insert(t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, t: Tensor) -> Result<(), ExecError> {
        t.check().map_err(ExecError::TensorFile)?;
        if t.data.is_none() {
            return Err(ExecError::TensorFile(format!("tensor {} has no data", t.name)));
        }
        if self.entries.contains_key(&t.name) {
            return Err(ExecError::TensorFile(format!("duplicate tensor name {}", t.name)));
        }
        self.entries.insert(t.name.clone(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_values().collect()
    }

    /// Parses a tensor file: an array of `{name, dtype, shape, data}` objects.
    pub fn parse(bytes: &[u8]) -> Result<Self, ExecError> {
        let tensors = parse_tensors(bytes).map_err(|e| ExecError::TensorFile(e.to_string()))?;
        Self::from_tensors(tensors)
    }

    /// Canonical tensor-file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        serialize_tensors(self.entries.values())
    }
}

fn describe(t: &Tensor) -> String {
    format!("{} {:?}", t.dtype, t.shape)
}

/// Executes `g` and returns every tensor it defines: inputs, initializers and
/// all node outputs.
pub fn execute_all(g: &InterchangeGraph, inputs: &NamedTensorSet) -> Result<BTreeMap<String, Tensor>, ExecError> {
    g.validate().into_result()?;
    let order = g.topo_sort()?;
    let mut env: BTreeMap<String, Tensor> = BTreeMap::new();
    for t in &g.initializers {
        env.insert(t.name.clone(), t.clone());
    }
    for spec in &g.inputs {
        let t = inputs.get(&spec.name).ok_or_else(|| ExecError::MissingInput(spec.name.clone()))?;
        if t.dtype != spec.dtype || t.shape != spec.shape {
            return Err(ExecError::InputMismatch { name: spec.name.clone(), expected: describe(spec), actual: describe(t) });
        }
        env.insert(spec.name.clone(), t.clone());
    }
    for id in order {
        let node = g.node(&id).expect("topo order only names existing nodes");
        let args: Vec<&Tensor> = node.inputs.iter().map(|n| &env[n]).collect();
        let outs = apply_node(node, &args)?;
        for t in outs {
            env.insert(t.name.clone(), t);
        }
    }
    Ok(env)
}

/// Executes `g` on `inputs` and returns exactly the declared outputs.
pub fn execute(g: &InterchangeGraph, inputs: &NamedTensorSet) -> Result<NamedTensorSet, ExecError> {
    let mut env = execute_all(g, inputs)?;
    let mut out = NamedTensorSet::new();
    for spec in &g.outputs {
        let t = env.remove(&spec.name).expect("validated outputs are produced");
        if t.dtype != spec.dtype || t.shape != spec.shape {
            return Err(ExecError::OutputMismatch { name: spec.name.clone(), expected: describe(spec), actual: describe(&t) });
        }
        out.insert(t)?;
    }
    Ok(out)
}
