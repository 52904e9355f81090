use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::interchange::{infer_declared, AttrValue, DType, GraphNode, InterchangeGraph, OpType, Tensor};

use super::sequential::matrix_dims;
use super::{check_model_name, ConvertError};

pub const LAYERDAG_TAG: &str = "tf-ckpt-v1";

/// A named layer DAG in the `tf` checkpoint format. Dense layers store
/// `kernel` as `[in, out]` and compute `y = x . K + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDagCheckpoint {
    pub format_tag: String,
    pub inputs: Vec<DagInput>,
    pub nodes: BTreeMap<String, DagNode>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagInput {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DagOp {
    Dense,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagNode {
    pub op: DagOp,
    pub inbound: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<DenseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrs: Option<DagAttrs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseParams {
    pub kernel: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<i64>,
}

impl LayerDagCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self, ConvertError> {
        let ckpt: Self = serde_json::from_slice(bytes).map_err(|e| ConvertError::Parse(e.to_string()))?;
        if ckpt.format_tag != LAYERDAG_TAG {
            return Err(ConvertError::FormatTag { expected: LAYERDAG_TAG, found: ckpt.format_tag });
        }
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("checkpoint serializes")
    }
}

impl DagNode {
    fn axis(&self) -> i64 {
        self.attrs.as_ref().and_then(|a| a.axis).unwrap_or(-1)
    }
}

/// Dag node names in dependency order, ties broken by name.
fn dependency_order(ckpt: &LayerDagCheckpoint) -> Result<Vec<&str>, ConvertError> {
    let inputs: BTreeSet<&str> = ckpt.inputs.iter().map(|i| i.name.as_str()).collect();
    let mut pending: BTreeMap<&str, usize> = BTreeMap::new();
    let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, node) in &ckpt.nodes {
        let mut deps = BTreeSet::new();
        for src in &node.inbound {
            if inputs.contains(src.as_str()) {
                continue;
            }
            if !ckpt.nodes.contains_key(src) {
                return Err(ConvertError::UnresolvedReference { node: name.clone(), reference: src.clone() });
            }
            deps.insert(src.as_str());
        }
        pending.insert(name, deps.len());
        for d in deps {
            consumers.entry(d).or_default().push(name);
        }
    }
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, &n)| n == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::new();
    while let Some(name) = ready.pop_first() {
        order.push(name);
        for c in consumers.get(name).into_iter().flatten() {
            let n = pending.get_mut(c).expect("consumer is a node");
            *n -= 1;
            if *n == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != ckpt.nodes.len() {
        let stuck = pending.iter().find(|(_, &n)| n > 0).map(|(k, _)| k.to_string()).unwrap_or_default();
        return Err(ConvertError::Cycle(stuck));
    }
    Ok(order)
}

pub fn convert_layerdag(
    ckpt: &LayerDagCheckpoint,
    model_name: &str,
    ir_version: i64,
) -> Result<InterchangeGraph, ConvertError> {
    check_model_name(model_name)?;
    let mut seen = BTreeSet::new();
    for name in ckpt.inputs.iter().map(|i| &i.name).chain(ckpt.nodes.keys()) {
        if name.is_empty() || name.contains('/') {
            return Err(ConvertError::InvalidName(format!("layer or input name {name:?} must be non-empty without '/'")));
        }
        if !seen.insert(name.as_str()) {
            return Err(ConvertError::InvalidName(format!("name {name} is used twice")));
        }
    }
    if ckpt.nodes.is_empty() {
        return Err(ConvertError::NoLayers);
    }
    let order = dependency_order(ckpt)?;

    let mut g = InterchangeGraph::new(model_name, ir_version);
    g.doc = Some(format!("converted-from {LAYERDAG_TAG}"));
    for i in &ckpt.inputs {
        g.inputs.push(Tensor::spec(i.name.clone(), DType::F64, i.shape.clone()));
    }

    for name in order {
        let node = &ckpt.nodes[name];
        let expect_inputs = |n: usize| -> Result<(), ConvertError> {
            let ok = if node.op == DagOp::Concat { node.inbound.len() >= n } else { node.inbound.len() == n };
            if ok {
                Ok(())
            } else {
                Err(ConvertError::Arity(format!("{name}: {:?} takes {n} inbound, got {}", node.op, node.inbound.len())))
            }
        };
        match node.op {
            DagOp::Dense => {
                expect_inputs(1)?;
                let params = node
                    .params
                    .as_ref()
                    .ok_or_else(|| ConvertError::WeightBias(format!("dense layer {name} has no params")))?;
                let (rows, cols) = matrix_dims(&params.kernel, &format!("{name} kernel"))?;
                if params.bias.len() != cols {
                    return Err(ConvertError::WeightBias(format!(
                        "{name} kernel has {cols} columns but bias has {} entries",
                        params.bias.len()
                    )));
                }
                let flat: Vec<f64> = params.kernel.iter().flatten().copied().collect();
                g.initializers.push(Tensor::f64(format!("{name}/kernel"), vec![rows, cols], flat));
                g.initializers.push(Tensor::f64(format!("{name}/bias"), vec![1, cols], params.bias.clone()));
                let product = format!("{name}/matmul_out");
                g.nodes.push(GraphNode::new(
                    format!("{name}/matmul"),
                    OpType::MatMul,
                    [node.inbound[0].clone(), format!("{name}/kernel")],
                    [product.clone()],
                ));
                g.nodes.push(GraphNode::new(format!("{name}/add"), OpType::Add, [product, format!("{name}/bias")], [name]));
            }
            DagOp::Relu | DagOp::Sigmoid | DagOp::Tanh => {
                expect_inputs(1)?;
                let (op, tag) = match node.op {
                    DagOp::Relu => (OpType::Relu, "relu"),
                    DagOp::Sigmoid => (OpType::Sigmoid, "sigmoid"),
                    _ => (OpType::Tanh, "tanh"),
                };
                g.nodes.push(GraphNode::new(format!("{name}/{tag}"), op, [node.inbound[0].clone()], [name]));
            }
            DagOp::Softmax => {
                expect_inputs(1)?;
                g.nodes.push(
                    GraphNode::new(format!("{name}/softmax"), OpType::Softmax, [node.inbound[0].clone()], [name])
                        .with_attr("axis", AttrValue::Int(node.axis())),
                );
            }
            DagOp::Concat => {
                expect_inputs(2)?;
                g.nodes.push(
                    GraphNode::new(format!("{name}/concat"), OpType::Concat, node.inbound.clone(), [name])
                        .with_attr("axis", AttrValue::Int(node.axis())),
                );
            }
        }
    }

    // Output placeholders first so shape inference can see them, then fill in shapes.
    for out in &ckpt.outputs {
        if !ckpt.nodes.contains_key(out) {
            return Err(ConvertError::UnresolvedReference { node: "outputs".into(), reference: out.clone() });
        }
        g.outputs.push(Tensor::spec(out.clone(), DType::F64, vec![]));
    }
    if g.outputs.is_empty() {
        return Err(ConvertError::InvalidName("checkpoint declares no outputs".into()));
    }
    let shapes = infer_declared(&g)?;
    for out in &mut g.outputs {
        out.shape = shapes[&out.name].clone();
    }
    Ok(g)
}
