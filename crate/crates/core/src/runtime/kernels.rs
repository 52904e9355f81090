//! Kernel table for the fixed operator set.

use crate::interchange::{element_count, normalize_axis, DType, GraphNode, OpType, Tensor, TensorData};

use super::ExecError;

trait Element: Copy {
    const ZERO: Self;
    fn plus(self, o: Self) -> Self;
    fn times(self, o: Self) -> Self;
    fn relu(self) -> Self;
}

trait Real: Element {
    fn sigmoid(self) -> Self;
    fn tanh_(self) -> Self;
    fn exp_(self) -> Self;
    fn minus(self, o: Self) -> Self;
    fn divide(self, o: Self) -> Self;
    fn maximum(self, o: Self) -> Self;
}

macro_rules! float_element {
    ($t:ty) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            fn plus(self, o: Self) -> Self {
                self + o
            }
            fn times(self, o: Self) -> Self {
                self * o
            }
            fn relu(self) -> Self {
                if self > 0.0 {
                    self
                } else {
                    0.0
                }
            }
        }

        impl Real for $t {
            fn sigmoid(self) -> Self {
                1.0 / (1.0 + (-self).exp())
            }
            fn tanh_(self) -> Self {
                self.tanh()
            }
            fn exp_(self) -> Self {
                self.exp()
            }
            fn minus(self, o: Self) -> Self {
                self - o
            }
            fn divide(self, o: Self) -> Self {
                self / o
            }
            fn maximum(self, o: Self) -> Self {
                if o > self {
                    o
                } else {
                    self
                }
            }
        }
    };
}

float_element!(f32);
float_element!(f64);

impl Element for i64 {
    const ZERO: Self = 0;
    fn plus(self, o: Self) -> Self {
        self.wrapping_add(o)
    }
    fn times(self, o: Self) -> Self {
        self.wrapping_mul(o)
    }
    fn relu(self) -> Self {
        self.max(0)
    }
}

fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::ZERO;
            for p in 0..k {
                acc = acc.plus(a[i * k + p].times(b[p * n + j]));
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn softmax<T: Real>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let dim = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.to_vec();
    if dim == 0 {
        return out;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * dim * inner + j * inner + i;
            let mut max = x[at(0)];
            for j in 1..dim {
                max = max.maximum(x[at(j)]);
            }
            let mut sum = T::ZERO;
            for j in 0..dim {
                let e = x[at(j)].minus(max).exp_();
                out[at(j)] = e;
                sum = sum.plus(e);
            }
            for j in 0..dim {
                out[at(j)] = out[at(j)].divide(sum);
            }
        }
    }
    out
}

fn concat<T: Copy>(parts: &[(&[T], &[usize])], axis: usize) -> Vec<T> {
    let lead = parts[0].1;
    let outer: usize = lead[..axis].iter().product();
    let inner: usize = lead[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(parts.iter().map(|(d, _)| d.len()).sum());
    for o in 0..outer {
        for (data, shape) in parts {
            let chunk = shape[axis] * inner;
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

fn parts<'a, T>(inputs: &[&'a Tensor], pick: fn(&'a TensorData) -> Option<&'a [T]>) -> Vec<(&'a [T], &'a [usize])> {
    inputs
        .iter()
        .map(|t| (t.data.as_ref().and_then(pick).expect("dtypes checked above"), t.shape.as_slice()))
        .collect()
}

fn shape_err(node: &GraphNode, detail: impl Into<String>) -> ExecError {
    ExecError::ShapeMismatch { node: node.id.clone(), detail: detail.into() }
}

fn data_of<'a>(node: &GraphNode, t: &'a Tensor) -> Result<&'a TensorData, ExecError> {
    t.data.as_ref().ok_or_else(|| ExecError::MissingData { node: node.id.clone(), tensor: t.name.clone() })
}

macro_rules! per_dtype {
    ($data:expr, |$v:ident| $body:expr) => {
        match $data {
            TensorData::F32($v) => TensorData::F32($body),
            TensorData::F64($v) => TensorData::F64($body),
            TensorData::I64($v) => TensorData::I64($body),
        }
    };
}

macro_rules! per_float {
    ($node:expr, $data:expr, |$v:ident| $body:expr) => {
        match $data {
            TensorData::F32($v) => TensorData::F32($body),
            TensorData::F64($v) => TensorData::F64($body),
            TensorData::I64(_) => {
                return Err(ExecError::UnsupportedDType {
                    node: $node.id.clone(),
                    op: $node.op_type,
                    dtype: DType::I64,
                })
            }
        }
    };
}

/// Applies one node to concrete input tensors. Output tensors are named after
/// the node's outputs.
pub fn apply_node(node: &GraphNode, inputs: &[&Tensor]) -> Result<Vec<Tensor>, ExecError> {
    let (min, max) = node.op_type.input_arity();
    if inputs.len() < min || max.is_some_and(|m| inputs.len() > m) || node.outputs.len() != 1 {
        return Err(ExecError::Arity { node: node.id.clone(), inputs: inputs.len() });
    }
    let dtype = inputs[0].dtype;
    if let Some(other) = inputs.iter().find(|t| t.dtype != dtype) {
        return Err(ExecError::DTypeMismatch {
            node: node.id.clone(),
            detail: format!("{} is {} but {} is {}", inputs[0].name, dtype, other.name, other.dtype),
        });
    }
    for t in inputs {
        let data = data_of(node, t)?;
        if data.dtype() != t.dtype {
            return Err(ExecError::DTypeMismatch {
                node: node.id.clone(),
                detail: format!("{} declares {} but holds {} data", t.name, t.dtype, data.dtype()),
            });
        }
        if element_count(&t.shape) != Some(data.len()) {
            return Err(shape_err(node, format!("{} data does not fill shape {:?}", t.name, t.shape)));
        }
    }

    let x = inputs[0];
    let xd = data_of(node, x)?;
    let (shape, data) = match node.op_type {
        OpType::MatMul => {
            let y = inputs[1];
            if x.shape.len() != 2 || y.shape.len() != 2 || x.shape[1] != y.shape[0] {
                return Err(shape_err(node, format!("cannot multiply {:?} by {:?}", x.shape, y.shape)));
            }
            let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
            if m.checked_mul(n).is_none() {
                return Err(shape_err(node, format!("product of {:?} and {:?} overflows", x.shape, y.shape)));
            }
            let data = match (xd, data_of(node, y)?) {
                (TensorData::F32(a), TensorData::F32(b)) => TensorData::F32(matmul(a, b, m, k, n)),
                (TensorData::F64(a), TensorData::F64(b)) => TensorData::F64(matmul(a, b, m, k, n)),
                (TensorData::I64(a), TensorData::I64(b)) => TensorData::I64(matmul(a, b, m, k, n)),
                _ => unreachable!("dtypes checked above"),
            };
            (vec![m, n], data)
        }
        OpType::Add => {
            let y = inputs[1];
            if x.shape != y.shape {
                return Err(shape_err(node, format!("cannot add {:?} and {:?}", x.shape, y.shape)));
            }
            let data = match (xd, data_of(node, y)?) {
                (TensorData::F32(a), TensorData::F32(b)) => TensorData::F32(a.iter().zip(b).map(|(p, q)| p.plus(*q)).collect()),
                (TensorData::F64(a), TensorData::F64(b)) => TensorData::F64(a.iter().zip(b).map(|(p, q)| p.plus(*q)).collect()),
                (TensorData::I64(a), TensorData::I64(b)) => TensorData::I64(a.iter().zip(b).map(|(p, q)| p.plus(*q)).collect()),
                _ => unreachable!("dtypes checked above"),
            };
            (x.shape.clone(), data)
        }
        OpType::Relu => (x.shape.clone(), per_dtype!(xd, |v| v.iter().map(|e| e.relu()).collect())),
        OpType::Sigmoid => (x.shape.clone(), per_float!(node, xd, |v| v.iter().map(|e| e.sigmoid()).collect())),
        OpType::Tanh => (x.shape.clone(), per_float!(node, xd, |v| v.iter().map(|e| e.tanh_()).collect())),
        OpType::Softmax => {
            let raw = node.attr_int("axis").ok_or_else(|| shape_err(node, "softmax needs an axis attribute"))?;
            let axis = normalize_axis(raw, x.shape.len())
                .ok_or_else(|| shape_err(node, format!("axis {raw} out of range for {:?}", x.shape)))?;
            (x.shape.clone(), per_float!(node, xd, |v| softmax(v, &x.shape, axis)))
        }
        OpType::Concat => {
            let raw = node.attr_int("axis").ok_or_else(|| shape_err(node, "concat needs an axis attribute"))?;
            let axis = normalize_axis(raw, x.shape.len())
                .ok_or_else(|| shape_err(node, format!("axis {raw} out of range for {:?}", x.shape)))?;
            let mut shape = x.shape.clone();
            for t in &inputs[1..] {
                let compatible = t.shape.len() == x.shape.len()
                    && (0..x.shape.len()).all(|i| i == axis || t.shape[i] == x.shape[i]);
                if !compatible {
                    return Err(shape_err(node, format!("cannot concat {:?} with {:?} on axis {axis}", x.shape, t.shape)));
                }
                shape[axis] += t.shape[axis];
            }
            let data = match xd {
                TensorData::F32(_) => TensorData::F32(concat(&parts(inputs, TensorData::as_f32), axis)),
                TensorData::F64(_) => TensorData::F64(concat(&parts(inputs, TensorData::as_f64), axis)),
                TensorData::I64(_) => TensorData::I64(concat(&parts(inputs, TensorData::as_i64), axis)),
            };
            (shape, data)
        }
        OpType::Reshape => {
            let target = node.attr_ints("target_shape").ok_or_else(|| shape_err(node, "reshape needs target_shape"))?;
            if target.iter().any(|&d| d < 0) {
                return Err(shape_err(node, format!("negative target_shape {target:?}")));
            }
            let target: Vec<usize> = target.iter().map(|&d| d as usize).collect();
            if element_count(&target) != Some(xd.len()) {
                return Err(shape_err(node, format!("cannot reshape {:?} to {:?}", x.shape, target)));
            }
            (target, xd.clone())
        }
        OpType::Identity => (x.shape.clone(), xd.clone()),
    };
    Ok(vec![Tensor::new(node.outputs[0].clone(), shape, data)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::AttrValue;

    fn run(node: GraphNode, inputs: &[Tensor]) -> Tensor {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        apply_node(&node, &refs).unwrap().remove(0)
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = run(GraphNode::new("r", OpType::Relu, ["x"], ["y"]), &[Tensor::f64("x", vec![3], vec![-1.0, 0.0, 2.0])]);
        assert_eq!(out, Tensor::f64("y", vec![3], vec![0.0, 0.0, 2.0]));
    }

    #[test]
    fn matmul_by_identity() {
        let a = Tensor::f64("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let i = Tensor::f64("i", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let out = run(GraphNode::new("m", OpType::MatMul, ["a", "i"], ["y"]), &[a, i]);
        assert_eq!(out.data, Some(TensorData::F64(vec![1.0, 2.0, 3.0, 4.0])));
        assert_eq!(out.shape, vec![2, 2]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let node = GraphNode::new("s", OpType::Softmax, ["x"], ["y"]).with_attr("axis", AttrValue::Int(0));
        let out = run(node, &[Tensor::f64("x", vec![2], vec![0.0, 0.0])]);
        assert_eq!(out.data, Some(TensorData::F64(vec![0.5, 0.5])));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let node = GraphNode::new("s", OpType::Softmax, ["x"], ["y"]).with_attr("axis", AttrValue::Int(-1));
        let out = run(node, &[Tensor::f32("x", vec![1, 2], vec![1000.0, 1000.0])]);
        assert_eq!(out.data, Some(TensorData::F32(vec![0.5, 0.5])));
    }

    #[test]
    fn concat_interleaves_along_inner_axis() {
        let node = GraphNode::new("c", OpType::Concat, ["a", "b"], ["y"]).with_attr("axis", AttrValue::Int(1));
        let a = Tensor::i64("a", vec![2, 1], vec![1, 2]);
        let b = Tensor::i64("b", vec![2, 2], vec![10, 11, 20, 21]);
        let out = run(node, &[a, b]);
        assert_eq!(out.shape, vec![2, 3]);
        assert_eq!(out.data, Some(TensorData::I64(vec![1, 10, 11, 2, 20, 21])));
    }

    #[test]
    fn reshape_keeps_flat_data() {
        let node = GraphNode::new("r", OpType::Reshape, ["x"], ["y"]).with_attr("target_shape", AttrValue::Ints(vec![3, 2]));
        let out = run(node, &[Tensor::f64("x", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])]);
        assert_eq!(out.shape, vec![3, 2]);
        assert_eq!(out.data, Some(TensorData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])));
    }

    #[test]
    fn sigmoid_rejects_integers() {
        let node = GraphNode::new("s", OpType::Sigmoid, ["x"], ["y"]);
        let x = Tensor::i64("x", vec![1], vec![1]);
        assert!(matches!(apply_node(&node, &[&x]), Err(ExecError::UnsupportedDType { .. })));
    }

    #[test]
    fn mixed_dtypes_are_rejected() {
        let node = GraphNode::new("a", OpType::Add, ["x", "y"], ["z"]);
        let x = Tensor::f64("x", vec![1], vec![1.0]);
        let y = Tensor::f32("y", vec![1], vec![1.0]);
        assert!(matches!(apply_node(&node, &[&x, &y]), Err(ExecError::DTypeMismatch { .. })));
    }

    #[test]
    fn add_shape_mismatch_names_node() {
        let node = GraphNode::new("adder", OpType::Add, ["x", "y"], ["z"]);
        let x = Tensor::f64("x", vec![2], vec![1.0, 2.0]);
        let y = Tensor::f64("y", vec![1, 2], vec![1.0, 2.0]);
        match apply_node(&node, &[&x, &y]) {
            Err(ExecError::ShapeMismatch { node, .. }) => assert_eq!(node, "adder"),
            other => panic!("{other:?}"),
        }
    }
}
