use std::collections::BTreeMap;

use super::{element_count, GraphError, GraphNode, InterchangeGraph, OpType};

pub type ShapeMap = BTreeMap<String, Vec<usize>>;

/// Resolves a possibly negative axis against `rank`.
pub fn normalize_axis(axis: i64, rank: usize) -> Option<usize> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    (0..r).contains(&a).then_some(a as usize)
}

fn mismatch(node: &GraphNode, expected: impl Into<String>, actual: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch { node: node.id.clone(), expected: expected.into(), actual: actual.into() }
}

/// Output shape of a single node given its input shapes.
pub fn node_output_shape(node: &GraphNode, inputs: &[&[usize]]) -> Result<Vec<usize>, GraphError> {
    match node.op_type {
        OpType::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.len() != 2 || b.len() != 2 {
                return Err(mismatch(node, "two rank-2 operands", format!("{a:?} x {b:?}")));
            }
            if a[1] != b[0] {
                return Err(mismatch(node, format!("[{}, k] x [k, n] with k = {}", a[0], a[1]), format!("{a:?} x {b:?}")));
            }
            Ok(vec![a[0], b[1]])
        }
        OpType::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a != b {
                return Err(mismatch(node, format!("{a:?}"), format!("{b:?}")));
            }
            Ok(a.to_vec())
        }
        OpType::Relu | OpType::Sigmoid | OpType::Tanh | OpType::Identity => Ok(inputs[0].to_vec()),
        OpType::Softmax => {
            let s = inputs[0];
            let axis = node.attr_int("axis").unwrap_or(i64::MIN);
            if normalize_axis(axis, s.len()).is_none() {
                return Err(mismatch(node, format!("axis within rank {}", s.len()), format!("axis {axis}")));
            }
            Ok(s.to_vec())
        }
        OpType::Concat => {
            let first = inputs[0];
            let axis_attr = node.attr_int("axis").unwrap_or(i64::MIN);
            let axis = normalize_axis(axis_attr, first.len())
                .ok_or_else(|| mismatch(node, format!("axis within rank {}", first.len()), format!("axis {axis_attr}")))?;
            let mut out = first.to_vec();
            for s in &inputs[1..] {
                let same_rest = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(i, (x, y))| i == axis || x == y);
                if !same_rest {
                    return Err(mismatch(
                        node,
                        format!("{first:?} outside axis {axis}"),
                        format!("{s:?}"),
                    ));
                }
                out[axis] = out[axis]
                    .checked_add(s[axis])
                    .ok_or_else(|| mismatch(node, "representable size", "overflow"))?;
            }
            Ok(out)
        }
        OpType::Reshape => {
            let s = inputs[0];
            let target = node.attr_ints("target_shape").unwrap_or(&[]);
            if target.iter().any(|&d| d < 0) {
                return Err(mismatch(node, "non-negative target_shape", format!("{target:?}")));
            }
            let target: Vec<usize> = target.iter().map(|&d| d as usize).collect();
            let (from, to) = (element_count(s), element_count(&target));
            if from.is_none() || from != to {
                return Err(mismatch(
                    node,
                    format!("{target:?} with {} elements", to.map_or("overflowing".into(), |n| n.to_string())),
                    format!("{s:?} with {} elements", from.map_or("overflowing".into(), |n| n.to_string())),
                ));
            }
            Ok(target)
        }
    }
}

/// Infers the shape of every tensor in `g` from the shapes of its inputs.
pub fn infer_shapes(g: &InterchangeGraph, input_shapes: &ShapeMap) -> Result<ShapeMap, GraphError> {
    g.validate().into_result()?;
    let mut shapes = ShapeMap::new();
    for t in &g.inputs {
        let s = input_shapes.get(&t.name).ok_or_else(|| GraphError::MissingInput(t.name.clone()))?;
        shapes.insert(t.name.clone(), s.clone());
    }
    for t in &g.initializers {
        shapes.insert(t.name.clone(), t.shape.clone());
    }
    for id in g.topo_sort()? {
        let node = g.node(&id).expect("topo order only names existing nodes");
        let ins: Vec<&[usize]> = node.inputs.iter().map(|n| shapes[n].as_slice()).collect();
        let out = node_output_shape(node, &ins)?;
        shapes.insert(node.outputs[0].clone(), out);
    }
    Ok(shapes)
}

/// Shapes inferred from the graph's own declared input shapes.
pub fn infer_declared(g: &InterchangeGraph) -> Result<ShapeMap, GraphError> {
    let inputs = g.inputs.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    infer_shapes(g, &inputs)
}
