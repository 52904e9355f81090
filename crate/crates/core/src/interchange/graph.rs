use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GraphError, Tensor};

/// The fixed operator set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpType {
    MatMul,
    Add,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Concat,
    Reshape,
    Identity,
}

impl OpType {
    pub const ALL: [OpType; 9] = [
        OpType::MatMul,
        OpType::Add,
        OpType::Relu,
        OpType::Sigmoid,
        OpType::Tanh,
        OpType::Softmax,
        OpType::Concat,
        OpType::Reshape,
        OpType::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpType::MatMul => "MatMul",
            OpType::Add => "Add",
            OpType::Relu => "Relu",
            OpType::Sigmoid => "Sigmoid",
            OpType::Tanh => "Tanh",
            OpType::Softmax => "Softmax",
            OpType::Concat => "Concat",
            OpType::Reshape => "Reshape",
            OpType::Identity => "Identity",
        }
    }

    /// Minimum and maximum input count; `None` means unbounded.
    pub fn input_arity(self) -> (usize, Option<usize>) {
        match self {
            OpType::MatMul | OpType::Add => (2, Some(2)),
            OpType::Concat => (2, None),
            _ => (1, Some(1)),
        }
    }

    /// Attribute that must be present, with its expected kind.
    pub fn required_attribute(self) -> Option<(&'static str, AttrKind)> {
        match self {
            OpType::Softmax | OpType::Concat => Some(("axis", AttrKind::Int)),
            OpType::Reshape => Some(("target_shape", AttrKind::Ints)),
            _ => None,
        }
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpType {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpType::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| GraphError::UnknownOp(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttrKind {
    Int,
    Ints,
    Str,
}

/// Node attribute value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Ints(Vec<i64>),
    Str(String),
}

impl AttrValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            AttrValue::Int(_) => AttrKind::Int,
            AttrValue::Ints(_) => AttrKind::Ints,
            AttrValue::Str(_) => AttrKind::Str,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub id: String,
    pub op_type: OpType,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl GraphNode {
    pub fn new<I, O, S1, S2>(id: impl Into<String>, op_type: OpType, inputs: I, outputs: O) -> Self
    where
        I: IntoIterator<Item = S1>,
        O: IntoIterator<Item = S2>,
        S1: Into<String>,
        S2: Into<String>,
    {
        GraphNode {
            id: id.into(),
            op_type,
            inputs: inputs.into_iter().map(Into::into).collect(),
            outputs: outputs.into_iter().map(Into::into).collect(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: AttrValue) -> Self {
        self.attributes.insert(key.into(), value);
        self
    }

    pub fn attr_int(&self, key: &str) -> Option<i64> {
        self.attributes.get(key).and_then(AttrValue::as_int)
    }

    pub fn attr_ints(&self, key: &str) -> Option<&[i64]> {
        self.attributes.get(key).and_then(AttrValue::as_ints)
    }
}

/// A framework-neutral computational graph.
///
/// Node and initializer order is not part of a graph's identity: equality and
/// the canonical encoding both treat them as sets keyed by id / name.
/// Input and output order is significant.
#[derive(Clone, Debug)]
pub struct InterchangeGraph {
    pub name: String,
    pub ir_version: i64,
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
    pub initializers: Vec<Tensor>,
    pub nodes: Vec<GraphNode>,
    pub doc: Option<String>,
}

impl PartialEq for InterchangeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.ir_version == other.ir_version
            && self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.doc == other.doc
            && self.sorted_initializers() == other.sorted_initializers()
            && self.sorted_nodes() == other.sorted_nodes()
    }
}

impl Eq for InterchangeGraph {}

impl InterchangeGraph {
    pub fn new(name: impl Into<String>, ir_version: i64) -> Self {
        InterchangeGraph {
            name: name.into(),
            ir_version,
            inputs: Vec::new(),
            outputs: Vec::new(),
            initializers: Vec::new(),
            nodes: Vec::new(),
            doc: None,
        }
    }

    pub fn sorted_initializers(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.initializers.iter().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    pub fn sorted_nodes(&self) -> Vec<&GraphNode> {
        let mut v: Vec<&GraphNode> = self.nodes.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn initializer(&self, name: &str) -> Option<&Tensor> {
        self.initializers.iter().find(|t| t.name == name)
    }

    /// Every tensor name the graph defines: inputs, initializers and node outputs.
    pub fn tensor_names(&self) -> BTreeSet<&str> {
        self.inputs
            .iter()
            .map(|t| t.name.as_str())
            .chain(self.initializers.iter().map(|t| t.name.as_str()))
            .chain(self.nodes.iter().flat_map(|n| n.outputs.iter().map(String::as_str)))
            .collect()
    }

    /// Runs every structural check and collects the violations.
    pub fn validate(&self) -> ValidationReport {
        validate_graph(self)
    }

    pub fn topo_sort(&self) -> Result<Vec<String>, GraphError> {
        topo_sort(self)
    }
}

/// Outcome of a validation pass. Violations are data, not failures.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<String>) -> Self {
        ValidationReport { ok: violations.is_empty(), violations }
    }

    pub fn into_result(self) -> Result<(), GraphError> {
        if self.ok {
            Ok(())
        } else {
            Err(GraphError::Invalid(self.violations))
        }
    }
}

enum Producer<'a> {
    Input,
    Initializer,
    Node(&'a str),
}

impl Producer<'_> {
    fn describe(&self) -> String {
        match self {
            Producer::Input => "graph input".to_string(),
            Producer::Initializer => "initializer".to_string(),
            Producer::Node(id) => format!("node {id}"),
        }
    }
}

pub fn validate_graph(g: &InterchangeGraph) -> ValidationReport {
    let mut v = Vec::new();

    if g.name.is_empty() {
        v.push("graph name is empty".to_string());
    } else if g.name.contains('/') {
        v.push(format!("graph name {} contains '/'", g.name));
    }
    if g.ir_version < 1 {
        v.push(format!("ir_version {} must be at least 1", g.ir_version));
    }

    for t in g.inputs.iter().chain(&g.outputs) {
        if let Err(e) = t.check() {
            v.push(e);
        }
        if t.data.is_some() {
            v.push(format!("graph input/output {} must not carry data", t.name));
        }
    }
    for t in &g.initializers {
        if let Err(e) = t.check() {
            v.push(e);
        }
        if t.data.is_none() {
            v.push(format!("initializer {} has no data", t.name));
        }
    }

    let mut seen_ids: HashMap<&str, usize> = HashMap::new();
    for n in &g.nodes {
        if n.id.is_empty() {
            v.push("node with empty id".to_string());
        }
        *seen_ids.entry(n.id.as_str()).or_default() += 1;
        check_node_shape(n, &mut v);
    }
    let mut dup_ids: Vec<&str> = seen_ids.iter().filter(|(_, &c)| c > 1).map(|(id, _)| *id).collect();
    dup_ids.sort_unstable();
    for id in dup_ids {
        v.push(format!("node id {id} is used by more than one node"));
    }

    // Single assignment across inputs, initializers and node outputs.
    let mut producers: BTreeMap<&str, Vec<Producer>> = BTreeMap::new();
    for t in &g.inputs {
        producers.entry(&t.name).or_default().push(Producer::Input);
    }
    for t in &g.initializers {
        producers.entry(&t.name).or_default().push(Producer::Initializer);
    }
    for n in &g.nodes {
        for out in &n.outputs {
            if out.is_empty() {
                v.push(format!("node {} has an empty output name", n.id));
            }
            producers.entry(out).or_default().push(Producer::Node(&n.id));
        }
    }
    for (name, ps) in &producers {
        if ps.len() > 1 {
            let who: Vec<String> = ps.iter().map(Producer::describe).collect();
            v.push(format!("tensor {name} is produced more than once: {}", who.join(", ")));
        }
    }

    for n in &g.nodes {
        for inp in &n.inputs {
            if !producers.contains_key(inp.as_str()) {
                v.push(format!("node {} input {inp} is produced nowhere", n.id));
            }
        }
    }

    let mut seen_outputs = BTreeSet::new();
    for out in &g.outputs {
        if !seen_outputs.insert(out.name.as_str()) {
            v.push(format!("output {} is listed more than once", out.name));
        }
        let produced = producers
            .get(out.name.as_str())
            .map(|ps| ps.iter().any(|p| matches!(p, Producer::Node(_) | Producer::Initializer)))
            .unwrap_or(false);
        if !produced {
            v.push(format!("output {} produced by no node or initializer", out.name));
        }
    }

    if let Err(GraphError::Cycle { node }) = topo_sort(g) {
        v.push(format!("node dependency cycle through node {node}"));
    }

    ValidationReport::from_violations(v)
}

fn check_node_shape(n: &GraphNode, v: &mut Vec<String>) {
    let (min, max) = n.op_type.input_arity();
    let count = n.inputs.len();
    let arity_ok = count >= min && max.map_or(true, |m| count <= m);
    if !arity_ok {
        let expected = match max {
            Some(m) if m == min => format!("{min}"),
            Some(m) => format!("{min}..={m}"),
            None => format!("at least {min}"),
        };
        v.push(format!("node {} ({}) takes {expected} inputs, got {count}", n.id, n.op_type));
    }
    if n.outputs.len() != 1 {
        v.push(format!("node {} ({}) must have exactly 1 output, got {}", n.id, n.op_type, n.outputs.len()));
    }
    if let Some((key, kind)) = n.op_type.required_attribute() {
        match n.attributes.get(key) {
            None => v.push(format!("node {} ({}) requires attribute {key}", n.id, n.op_type)),
            Some(val) if val.kind() != kind => {
                v.push(format!("node {} attribute {key} has the wrong type", n.id))
            }
            Some(AttrValue::Ints(dims)) if dims.iter().any(|&d| d < 0) => {
                v.push(format!("node {} attribute {key} has a negative dimension", n.id))
            }
            Some(_) => {}
        }
    }
}

/// Orders nodes so that every producer precedes its consumers. Ready nodes are
/// taken in ascending id order, which makes the result deterministic.
pub fn topo_sort(g: &InterchangeGraph) -> Result<Vec<String>, GraphError> {
    let mut producer_of: HashMap<&str, usize> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        for out in &n.outputs {
            producer_of.entry(out.as_str()).or_insert(i);
        }
    }

    // Predecessor sets, deduplicated so repeated inputs count once.
    let preds: Vec<BTreeSet<usize>> = g
        .nodes
        .iter()
        .map(|n| n.inputs.iter().filter_map(|inp| producer_of.get(inp.as_str()).copied()).collect())
        .collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    let mut pending: Vec<usize> = vec![0; g.nodes.len()];
    for (i, ps) in preds.iter().enumerate() {
        pending[i] = ps.len();
        for &p in ps {
            succs[p].push(i);
        }
    }

    let mut ready: BTreeSet<(&str, usize)> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| pending[*i] == 0)
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(g.nodes[i].id.clone());
        for &s in &succs[i] {
            pending[s] -= 1;
            if pending[s] == 0 {
                ready.insert((g.nodes[s].id.as_str(), s));
            }
        }
    }

    if order.len() == g.nodes.len() {
        return Ok(order);
    }

    // Every remaining node has an unfinished predecessor; walking predecessors
    // from the smallest remaining id must revisit a node, which lies on a cycle.
    let remaining: BTreeSet<(&str, usize)> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| pending[*i] > 0)
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut visited = vec![false; g.nodes.len()];
    let mut cur = remaining.first().map(|x| x.1).unwrap_or(0);
    while !visited[cur] {
        visited[cur] = true;
        cur = *preds[cur]
            .iter()
            .find(|p| pending[**p] > 0)
            .expect("remaining node has an unfinished predecessor");
    }
    Err(GraphError::Cycle { node: g.nodes[cur].id.clone() })
}
