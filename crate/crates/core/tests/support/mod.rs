//! Test-side generators and reference evaluators. Nothing here calls into the
//! crate's kernels or shape inference.

#![allow(dead_code)]

use std::collections::BTreeMap;

use hpcfair_core::interchange::AttrValue;
use hpcfair_core::runtime::NamedTensorSet;
use hpcfair_core::{DType, GraphNode, InterchangeGraph, OpType, Tensor, TensorData};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Dense row-major values with a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn from_tensor(t: &Tensor) -> Dense {
        let data = match t.data.as_ref().expect("tensor has data") {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Dense { shape: t.shape.clone(), data }
    }
}

fn values(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// A random structurally valid graph with `1..=max_nodes` nodes over `dtype`
/// tensors, plus matching random inputs.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize, dtype: DType) -> (InterchangeGraph, NamedTensorSet) {
    let make = |name: String, shape: Vec<usize>, data: Vec<f64>| match dtype {
        DType::F32 => Tensor::f32(name, shape, data.into_iter().map(|x| x as f32).collect()),
        _ => Tensor::f64(name, shape, data),
    };
    let mut g = InterchangeGraph::new(format!("g{}", rng.random_range(0..1000)), rng.random_range(1..=12));
    let mut inputs = NamedTensorSet::new();
    let mut pool: Vec<(String, Vec<usize>)> = Vec::new();
    for i in 0..rng.random_range(1..=2) {
        let shape = vec![rng.random_range(1..=3), rng.random_range(1..=4)];
        let name = format!("in{i}");
        g.inputs.push(Tensor::spec(name.clone(), dtype, shape.clone()));
        inputs.insert(make(name.clone(), shape.clone(), values(rng, count(&shape)))).expect("fresh name");
        pool.push((name, shape));
    }
    let mut init_id = 0;
    let mut initializer = |g: &mut InterchangeGraph, rng: &mut dyn rand::RngCore, shape: Vec<usize>| {
        init_id += 1;
        let name = format!("w{init_id}");
        let data = (0..count(&shape)).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.initializers.push(make(name.clone(), shape.clone(), data));
        name
    };

    let n_nodes = rng.random_range(1..=max_nodes);
    for i in 0..n_nodes {
        let (a, a_shape) = pool.choose(rng).expect("pool is never empty").clone();
        let id = format!("n{i}");
        let out = format!("t{i}");
        let pick = rng.random_range(0..9);
        let (node, shape) = match pick {
            0 if a_shape.len() == 2 => {
                let k = a_shape[1];
                let partner = pool.iter().filter(|(_, s)| s.len() == 2 && s[0] == k).collect::<Vec<_>>().choose(rng).cloned().cloned();
                let (b, b_shape) = match partner {
                    Some(p) if rng.random_bool(0.5) => p,
                    _ => {
                        let s = vec![k, rng.random_range(1..=4)];
                        (initializer(&mut g, rng, s.clone()), s)
                    }
                };
                (GraphNode::new(id, OpType::MatMul, [a, b], [out.clone()]), vec![a_shape[0], b_shape[1]])
            }
            1 => {
                let partner = pool.iter().filter(|(_, s)| *s == a_shape).collect::<Vec<_>>().choose(rng).cloned().cloned();
                let b = match partner {
                    Some((b, _)) if rng.random_bool(0.6) => b,
                    _ => initializer(&mut g, rng, a_shape.clone()),
                };
                (GraphNode::new(id, OpType::Add, [a, b], [out.clone()]), a_shape)
            }
            2 => (GraphNode::new(id, OpType::Relu, [a], [out.clone()]), a_shape),
            3 => (GraphNode::new(id, OpType::Sigmoid, [a], [out.clone()]), a_shape),
            4 => (GraphNode::new(id, OpType::Tanh, [a], [out.clone()]), a_shape),
            5 => {
                let rank = a_shape.len() as i64;
                let axis = rng.random_range(-rank..rank);
                (GraphNode::new(id, OpType::Softmax, [a], [out.clone()]).with_attr("axis", AttrValue::Int(axis)), a_shape)
            }
            6 => {
                let rank = a_shape.len() as i64;
                let axis = rng.random_range(-rank..rank);
                let ax = if axis < 0 { (axis + rank) as usize } else { axis as usize };
                let mut ins = vec![a];
                let mut shape = a_shape.clone();
                for _ in 0..rng.random_range(1..=2) {
                    let mut s = a_shape.clone();
                    s[ax] = rng.random_range(1..=3);
                    let fits = pool.iter().filter(|(_, p)| p.len() == s.len() && p.iter().zip(&s).enumerate().all(|(d, (x, y))| d == ax || x == y));
                    let fits: Vec<_> = fits.collect();
                    let (name, used) = match fits.choose(rng) {
                        Some((n, p)) if rng.random_bool(0.5) => (n.clone(), p.clone()),
                        _ => (initializer(&mut g, rng, s.clone()), s),
                    };
                    shape[ax] += used[ax];
                    ins.push(name);
                }
                (GraphNode::new(id, OpType::Concat, ins, [out.clone()]).with_attr("axis", AttrValue::Int(axis)), shape)
            }
            7 => {
                let n = count(&a_shape);
                let mut options = vec![vec![n], vec![1, n], vec![n, 1]];
                if a_shape.len() == 2 {
                    options.push(vec![a_shape[1], a_shape[0]]);
                    options.push(vec![a_shape[0], 1, a_shape[1]]);
                }
                let target = options.choose(rng).expect("non-empty").clone();
                let attr = AttrValue::Ints(target.iter().map(|&d| d as i64).collect());
                (GraphNode::new(id, OpType::Reshape, [a], [out.clone()]).with_attr("target_shape", attr), target)
            }
            _ => (GraphNode::new(id, OpType::Identity, [a], [out.clone()]), a_shape),
        };
        g.nodes.push(node);
        pool.push((out, shape));
    }

    let node_outputs: Vec<&(String, Vec<usize>)> = pool.iter().filter(|(n, _)| n.starts_with('t')).collect();
    let last = node_outputs.last().expect("at least one node");
    g.outputs.push(Tensor::spec(last.0.clone(), dtype, last.1.clone()));
    for (name, shape) in node_outputs.iter().rev().skip(1) {
        if rng.random_bool(0.25) {
            g.outputs.push(Tensor::spec(name.clone(), dtype, shape.clone()));
        }
    }
    if rng.random_bool(0.5) {
        g.doc = Some(format!("random graph with {n_nodes} nodes"));
    }
    (g, inputs)
}

fn axis_of(node: &GraphNode, rank: usize) -> usize {
    let a = node.attributes["axis"].as_int().expect("int axis");
    if a < 0 {
        (a + rank as i64) as usize
    } else {
        a as usize
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

fn eval_node(node: &GraphNode, args: &[&Dense]) -> Dense {
    let unary = |f: fn(f64) -> f64| Dense { shape: args[0].shape.clone(), data: args[0].data.iter().map(|&x| f(x)).collect() };
    match node.op_type {
        OpType::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..k {
                        acc += a.data[i * k + t] * b.data[t * n + j];
                    }
                    out[i * n + j] = acc;
                }
            }
            Dense { shape: vec![m, n], data: out }
        }
        OpType::Add => Dense { shape: args[0].shape.clone(), data: args[0].data.iter().zip(&args[1].data).map(|(x, y)| x + y).collect() },
        OpType::Relu => unary(|x| if x > 0.0 { x } else { 0.0 }),
        OpType::Sigmoid => unary(|x| 1.0 / (1.0 + (-x).exp())),
        OpType::Tanh => unary(f64::tanh),
        OpType::Identity => args[0].clone(),
        OpType::Reshape => {
            let target = node.attributes["target_shape"].as_ints().expect("ints").iter().map(|&d| d as usize).collect();
            Dense { shape: target, data: args[0].data.clone() }
        }
        OpType::Softmax => {
            let x = args[0];
            let axis = axis_of(node, x.shape.len());
            let (outer, len, inner) = around(&x.shape, axis);
            let mut out = x.data.clone();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let max = (0..len).map(|j| x.data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = (0..len).map(|j| (x.data[idx(j)] - max).exp()).sum();
                    for j in 0..len {
                        out[idx(j)] = (x.data[idx(j)] - max).exp() / total;
                    }
                }
            }
            Dense { shape: x.shape.clone(), data: out }
        }
        OpType::Concat => {
            let axis = axis_of(node, args[0].shape.len());
            let mut shape = args[0].shape.clone();
            shape[axis] = args.iter().map(|a| a.shape[axis]).sum();
            let (outer, _, inner) = around(&args[0].shape, axis);
            let mut data = Vec::with_capacity(count(&shape));
            for o in 0..outer {
                for a in args {
                    let chunk = a.shape[axis] * inner;
                    data.extend_from_slice(&a.data[o * chunk..(o + 1) * chunk]);
                }
            }
            Dense { shape, data }
        }
    }
}

/// Evaluates every tensor of `g` by repeatedly firing any node whose inputs
/// are ready.
pub fn oracle_all(g: &InterchangeGraph, inputs: &NamedTensorSet) -> BTreeMap<String, Dense> {
    let mut env: BTreeMap<String, Dense> = BTreeMap::new();
    for t in g.initializers.iter().chain(inputs.iter()) {
        env.insert(t.name.clone(), Dense::from_tensor(t));
    }
    let mut pending: Vec<&GraphNode> = g.nodes.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|node| {
            if !node.inputs.iter().all(|n| env.contains_key(n)) {
                return true;
            }
            let args: Vec<&Dense> = node.inputs.iter().map(|n| &env[n]).collect();
            let out = eval_node(node, &args);
            env.insert(node.outputs[0].clone(), out);
            false
        });
        assert!(pending.len() < before, "graph has a cycle or a dangling input");
    }
    env
}

/// Relative closeness with an absolute floor for values at or near zero.
pub fn close(a: f64, b: f64, rtol: f64) -> bool {
    a == b || (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1e-6)
}

pub fn all_close(a: &[f64], b: &[f64], rtol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, rtol))
}

/// Direct evaluation of a `pt` sequential checkpoint on a row vector.
pub fn eval_sequential(ckpt: &serde_json::Value, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    for layer in ckpt["layers"].as_array().expect("layers") {
        match layer["kind"].as_str().expect("kind") {
            "linear" => {
                let w: Vec<Vec<f64>> = serde_json::from_value(layer["weight"].clone()).expect("weight");
                let b: Vec<f64> = serde_json::from_value(layer["bias"].clone()).expect("bias");
                v = w.iter().zip(&b).map(|(row, bias)| row.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>() + bias).collect();
            }
            "relu" => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            "sigmoid" => v.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
            "tanh" => v.iter_mut().for_each(|x| *x = x.tanh()),
            "softmax" => v = softmax_row(&v),
            other => panic!("unsupported layer {other}"),
        }
    }
    v
}

fn softmax_row(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Direct evaluation of a single-input, single-output `tf` layer DAG made of
/// dense and activation layers.
pub fn eval_layerdag(ckpt: &serde_json::Value, x: &[f64]) -> Vec<f64> {
    let input = ckpt["inputs"][0]["name"].as_str().expect("input name").to_string();
    let nodes = ckpt["nodes"].as_object().expect("nodes");
    let mut env: BTreeMap<String, Vec<f64>> = BTreeMap::from([(input, x.to_vec())]);
    while env.len() < nodes.len() + 1 {
        for (name, node) in nodes {
            let src = node["inbound"][0].as_str().expect("inbound");
            if env.contains_key(name) || !env.contains_key(src) {
                continue;
            }
            let v = &env[src];
            let out = match node["op"].as_str().expect("op") {
                "dense" => {
                    let k: Vec<Vec<f64>> = serde_json::from_value(node["params"]["kernel"].clone()).expect("kernel");
                    let b: Vec<f64> = serde_json::from_value(node["params"]["bias"].clone()).expect("bias");
                    (0..b.len()).map(|j| (0..v.len()).map(|i| v[i] * k[i][j]).sum::<f64>() + b[j]).collect()
                }
                "relu" => v.iter().map(|x| x.max(0.0)).collect(),
                "sigmoid" => v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
                "tanh" => v.iter().map(|x| x.tanh()).collect(),
                "softmax" => softmax_row(v),
                other => panic!("unsupported op {other}"),
            };
            env.insert(name.clone(), out);
        }
    }
    env[ckpt["outputs"][0].as_str().expect("output")].clone()
}
