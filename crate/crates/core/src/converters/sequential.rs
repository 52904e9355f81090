use serde::{Deserialize, Serialize};

use crate::interchange::{infer_declared, AttrValue, DType, GraphNode, InterchangeGraph, OpType, Tensor};

use super::{check_model_name, ConvertError};

pub const SEQUENTIAL_TAG: &str = "pt-ckpt-v1";

/// A layer list in the `pt` checkpoint format. Linear layers store
/// `weight` as `[out, in]` and compute `y = x . W^T + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialCheckpoint {
    pub format_tag: String,
    /// Input width, required only when no linear layer fixes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub layers: Vec<SequentialLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SequentialLayer {
    Linear { weight: Vec<Vec<f64>>, bias: Vec<f64> },
    Relu,
    Sigmoid,
    Tanh,
    Softmax { axis: i64 },
}

impl SequentialCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self, ConvertError> {
        let ckpt: Self = serde_json::from_slice(bytes).map_err(|e| ConvertError::Parse(e.to_string()))?;
        if ckpt.format_tag != SEQUENTIAL_TAG {
            return Err(ConvertError::FormatTag { expected: SEQUENTIAL_TAG, found: ckpt.format_tag });
        }
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("checkpoint serializes")
    }
}

/// Rows and columns of a rectangular matrix.
pub(super) fn matrix_dims(m: &[Vec<f64>], what: &str) -> Result<(usize, usize), ConvertError> {
    let rows = m.len();
    if rows == 0 {
        return Err(ConvertError::WeightBias(format!("{what} has no rows")));
    }
    let cols = m[0].len();
    if m.iter().any(|r| r.len() != cols) {
        return Err(ConvertError::WeightBias(format!("{what} rows have unequal lengths")));
    }
    Ok((rows, cols))
}

pub fn convert_sequential(
    ckpt: &SequentialCheckpoint,
    model_name: &str,
    ir_version: i64,
) -> Result<InterchangeGraph, ConvertError> {
    check_model_name(model_name)?;
    if ckpt.layers.is_empty() {
        return Err(ConvertError::NoLayers);
    }

    // Check the dimension chain before building anything.
    let mut width = ckpt.input_dim;
    let mut input_width = ckpt.input_dim;
    for (i, layer) in ckpt.layers.iter().enumerate() {
        if let SequentialLayer::Linear { weight, bias } = layer {
            let (out, inp) = matrix_dims(weight, &format!("layer {i} weight"))?;
            if bias.len() != out {
                return Err(ConvertError::WeightBias(format!(
                    "layer {i} weight has {out} rows but bias has {} entries",
                    bias.len()
                )));
            }
            match width {
                Some(w) if w != inp => {
                    return Err(ConvertError::DimensionChain { layer: i, expected: w, found: inp });
                }
                _ => {}
            }
            input_width.get_or_insert(inp);
            width = Some(out);
        }
    }
    let input_width = input_width.ok_or(ConvertError::NoInputWidth)?;
    let output_width = width.expect("input width known implies a running width");

    let mut g = InterchangeGraph::new(model_name, ir_version);
    g.doc = Some(format!("converted-from {SEQUENTIAL_TAG}"));
    g.inputs.push(Tensor::spec("x", DType::F64, vec![1, input_width]));

    let last = ckpt.layers.len() - 1;
    let mut current = "x".to_string();
    for (i, layer) in ckpt.layers.iter().enumerate() {
        let out = if i == last { "y".to_string() } else { format!("layer{i}/out") };
        let p = format!("layer{i}");
        match layer {
            SequentialLayer::Linear { weight, bias } => {
                let (rows, cols) = (weight.len(), weight[0].len());
                // Materialize W^T as [in, out] so the graph multiplies x . W^T.
                let transposed: Vec<f64> = (0..cols).flat_map(|c| weight.iter().map(move |r| r[c])).collect();
                g.initializers.push(Tensor::f64(format!("{p}/weight_t"), vec![cols, rows], transposed));
                g.initializers.push(Tensor::f64(format!("{p}/bias"), vec![1, rows], bias.clone()));
                let product = format!("{p}/matmul_out");
                g.nodes.push(GraphNode::new(
                    format!("{p}/matmul"),
                    OpType::MatMul,
                    [current.clone(), format!("{p}/weight_t")],
                    [product.clone()],
                ));
                g.nodes.push(GraphNode::new(format!("{p}/add"), OpType::Add, [product, format!("{p}/bias")], [out.clone()]));
            }
            SequentialLayer::Relu => g.nodes.push(GraphNode::new(format!("{p}/relu"), OpType::Relu, [current.clone()], [out.clone()])),
            SequentialLayer::Sigmoid => {
                g.nodes.push(GraphNode::new(format!("{p}/sigmoid"), OpType::Sigmoid, [current.clone()], [out.clone()]))
            }
            SequentialLayer::Tanh => g.nodes.push(GraphNode::new(format!("{p}/tanh"), OpType::Tanh, [current.clone()], [out.clone()])),
            SequentialLayer::Softmax { axis } => g.nodes.push(
                GraphNode::new(format!("{p}/softmax"), OpType::Softmax, [current.clone()], [out.clone()])
                    .with_attr("axis", AttrValue::Int(*axis)),
            ),
        }
        current = out;
    }
    g.outputs.push(Tensor::spec("y", DType::F64, vec![1, output_width]));

    infer_declared(&g)?;
    Ok(g)
}
