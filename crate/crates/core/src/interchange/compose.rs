use std::collections::{BTreeMap, BTreeSet};

use super::{infer_declared, GraphError, GraphNode, InterchangeGraph, OpType, Tensor};

fn prefixed(graph: &str, name: &str) -> String {
    format!("{graph}/{name}")
}

fn prefix_tensor(graph: &str, t: &Tensor) -> Tensor {
    Tensor { name: prefixed(graph, &t.name), ..t.clone() }
}

fn prefix_node(graph: &str, n: &GraphNode) -> GraphNode {
    GraphNode {
        id: prefixed(graph, &n.id),
        op_type: n.op_type,
        inputs: n.inputs.iter().map(|s| prefixed(graph, s)).collect(),
        outputs: n.outputs.iter().map(|s| prefixed(graph, s)).collect(),
        attributes: n.attributes.clone(),
    }
}

/// Binds producer outputs to consumer inputs in declaration order.
pub fn positional_binding(
    producer: &InterchangeGraph,
    consumer: &InterchangeGraph,
) -> Result<Vec<(String, String)>, GraphError> {
    if producer.outputs.len() < consumer.inputs.len() {
        return Err(GraphError::Binding(format!(
            "{} has {} outputs but {} needs {} inputs",
            producer.name,
            producer.outputs.len(),
            consumer.name,
            consumer.inputs.len()
        )));
    }
    Ok(producer.outputs.iter().zip(&consumer.inputs).map(|(o, i)| (o.name.clone(), i.name.clone())).collect())
}

/// Stitches `producer` in front of `consumer`.
///
/// Every name from each side is prefixed with `"<graph name>/"`. Each bound
/// consumer input becomes the output of an `Identity` node reading the bound
/// producer output, so executing the result is bit-identical to running the
/// two graphs back to back. The result's inputs are the producer's inputs; its
/// outputs are the consumer's outputs followed by any unbound producer outputs.
pub fn compose_graphs(
    producer: &InterchangeGraph,
    consumer: &InterchangeGraph,
    binding: &[(String, String)],
) -> Result<InterchangeGraph, GraphError> {
    producer.validate().into_result()?;
    consumer.validate().into_result()?;
    if producer.name == consumer.name {
        return Err(GraphError::NameCollision(format!("both graphs are named {}", producer.name)));
    }

    let producer_outputs: BTreeMap<&str, &Tensor> = producer.outputs.iter().map(|t| (t.name.as_str(), t)).collect();
    let consumer_inputs: BTreeMap<&str, &Tensor> = consumer.inputs.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut bound_outputs = BTreeSet::new();
    let mut bound_inputs = BTreeSet::new();
    for (out, inp) in binding {
        if !producer_outputs.contains_key(out.as_str()) {
            return Err(GraphError::Binding(format!("{} has no output {out}", producer.name)));
        }
        if !consumer_inputs.contains_key(inp.as_str()) {
            return Err(GraphError::Binding(format!("{} has no input {inp}", consumer.name)));
        }
        if !bound_outputs.insert(out.as_str()) {
            return Err(GraphError::Binding(format!("producer output {out} is bound twice")));
        }
        if !bound_inputs.insert(inp.as_str()) {
            return Err(GraphError::Binding(format!("consumer input {inp} is bound twice")));
        }
    }
    if let Some(missing) = consumer.inputs.iter().find(|t| !bound_inputs.contains(t.name.as_str())) {
        return Err(GraphError::Binding(format!("consumer input {} is not bound", missing.name)));
    }

    let produced = infer_declared(producer)?;
    for (out, inp) in binding {
        let out_t = producer_outputs[out.as_str()];
        let in_t = consumer_inputs[inp.as_str()];
        let actual = &produced[out.as_str()];
        if *actual != in_t.shape || out_t.dtype != in_t.dtype {
            return Err(GraphError::Incompatible {
                output: out.clone(),
                input: inp.clone(),
                expected: format!("{} {:?}", in_t.dtype, in_t.shape),
                actual: format!("{} {:?}", out_t.dtype, actual),
            });
        }
    }

    let (p, c) = (producer.name.as_str(), consumer.name.as_str());
    let mut g = InterchangeGraph::new(format!("{p}+{c}"), producer.ir_version.max(consumer.ir_version));
    g.doc = Some(format!("composed-from {p} {c}"));
    g.inputs = producer.inputs.iter().map(|t| prefix_tensor(p, t)).collect();
    g.initializers = producer
        .initializers
        .iter()
        .map(|t| prefix_tensor(p, t))
        .chain(consumer.initializers.iter().map(|t| prefix_tensor(c, t)))
        .collect();
    g.nodes = producer.nodes.iter().map(|n| prefix_node(p, n)).chain(consumer.nodes.iter().map(|n| prefix_node(c, n))).collect();
    for (out, inp) in binding {
        g.nodes.push(GraphNode::new(
            format!("{c}/{inp}:bind"),
            OpType::Identity,
            [prefixed(p, out)],
            [prefixed(c, inp)],
        ));
    }
    g.outputs = consumer
        .outputs
        .iter()
        .map(|t| prefix_tensor(c, t))
        .chain(producer.outputs.iter().filter(|t| !bound_outputs.contains(t.name.as_str())).map(|t| prefix_tensor(p, t)))
        .collect();

    let mut tensors = BTreeSet::new();
    let defined = g
        .inputs
        .iter()
        .map(|t| &t.name)
        .chain(g.initializers.iter().map(|t| &t.name))
        .chain(g.nodes.iter().flat_map(|n| &n.outputs));
    for name in defined {
        if !tensors.insert(name.as_str()) {
            return Err(GraphError::NameCollision(name.clone()));
        }
    }
    let mut ids = BTreeSet::new();
    for n in &g.nodes {
        if !ids.insert(n.id.as_str()) {
            return Err(GraphError::NameCollision(n.id.clone()));
        }
    }

    g.validate().into_result()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::DType;

    fn identity(name: &str, width: usize) -> InterchangeGraph {
        let mut g = InterchangeGraph::new(name, 1);
        g.inputs.push(Tensor::spec("x", DType::F64, vec![1, width]));
        g.outputs.push(Tensor::spec("y", DType::F64, vec![1, width]));
        g.nodes.push(GraphNode::new("n", OpType::Identity, ["x"], ["y"]));
        g
    }

    fn bind(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn composed_graph_keeps_producer_inputs_and_consumer_outputs() {
        let g = compose_graphs(&identity("encoder", 8), &identity("decoder", 8), &bind(&[("y", "x")])).unwrap();
        assert_eq!(g.inputs.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["encoder/x"]);
        assert_eq!(g.outputs.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["decoder/y"]);
        assert!(g.validate().ok);
    }

    #[test]
    fn width_mismatch_is_incompatible() {
        let err = compose_graphs(&identity("encoder", 8), &identity("decoder", 4), &bind(&[("y", "x")])).unwrap_err();
        assert!(matches!(err, GraphError::Incompatible { .. }), "{err:?}");
    }

    #[test]
    fn uncovered_consumer_input_is_rejected() {
        let err = compose_graphs(&identity("a", 2), &identity("b", 2), &[]).unwrap_err();
        assert!(matches!(err, GraphError::Binding(m) if m.contains("not bound")));
    }

    #[test]
    fn same_graph_names_collide() {
        let err = compose_graphs(&identity("m", 2), &identity("m", 2), &bind(&[("y", "x")])).unwrap_err();
        assert!(matches!(err, GraphError::NameCollision(_)));
    }

    #[test]
    fn unbound_producer_outputs_are_kept() {
        let mut enc = identity("enc", 2);
        enc.nodes.push(GraphNode::new("m", OpType::Relu, ["x"], ["side"]));
        enc.outputs.push(Tensor::spec("side", DType::F64, vec![1, 2]));
        let g = compose_graphs(&enc, &identity("dec", 2), &bind(&[("y", "x")])).unwrap();
        assert_eq!(g.outputs.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["dec/y", "enc/side"]);
    }

    #[test]
    fn positional_binding_zips_declaration_order() {
        let b = positional_binding(&identity("a", 2), &identity("b", 2)).unwrap();
        assert_eq!(b, bind(&[("y", "x")]));
        let mut wide = identity("c", 2);
        wide.inputs.push(Tensor::spec("x2", DType::F64, vec![1, 2]));
        assert!(positional_binding(&identity("a", 2), &wide).is_err());
    }
}
