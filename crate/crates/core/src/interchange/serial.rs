//! Canonical text encoding for interchange graphs and tensor sets.
//!
//! The encoding is JSON with a fixed layout: top-level keys in a fixed order,
//! one tensor or node per line, nodes sorted by id, initializers sorted by
//! name, attribute keys sorted. Floats use the shortest decimal string that
//! round-trips for their width; non-finite values are encoded as the strings
//! `"NaN"`, `"Infinity"` and `"-Infinity"`. Two graphs are equal exactly when
//! their encodings are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{Map, Value};

use super::{AttrValue, DType, GraphError, GraphNode, InterchangeGraph, OpType, Tensor, TensorData};

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn push_f64(out: &mut String, x: f64) {
    if x.is_nan() {
        out.push_str("\"NaN\"");
    } else if x.is_infinite() {
        out.push_str(if x > 0.0 { "\"Infinity\"" } else { "\"-Infinity\"" });
    } else {
        out.push_str(&serde_json::to_string(&x).expect("finite float"));
    }
}

fn push_f32(out: &mut String, x: f32) {
    if x.is_finite() {
        out.push_str(&serde_json::to_string(&x).expect("finite float"));
    } else {
        push_f64(out, x as f64);
    }
}

fn push_list<T>(out: &mut String, items: &[T], mut each: impl FnMut(&mut String, &T)) {
    out.push('[');
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        each(out, item);
    }
    out.push(']');
}

/// Single-line canonical form of a tensor: `{"name", "dtype", "shape"[, "data"]}`.
pub fn encode_tensor(out: &mut String, t: &Tensor) {
    let _ = write!(out, "{{\"name\": {}, \"dtype\": \"{}\", \"shape\": ", quote(&t.name), t.dtype);
    push_list(out, &t.shape, |o, d| {
        let _ = write!(o, "{d}");
    });
    if let Some(data) = &t.data {
        out.push_str(", \"data\": ");
        match data {
            TensorData::F32(v) => push_list(out, v, |o, x| push_f32(o, *x)),
            TensorData::F64(v) => push_list(out, v, |o, x| push_f64(o, *x)),
            TensorData::I64(v) => push_list(out, v, |o, x| {
                let _ = write!(o, "{x}");
            }),
        }
    }
    out.push('}');
}

fn encode_attr(out: &mut String, v: &AttrValue) {
    match v {
        AttrValue::Int(i) => {
            let _ = write!(out, "{i}");
        }
        AttrValue::Ints(xs) => push_list(out, xs, |o, x| {
            let _ = write!(o, "{x}");
        }),
        AttrValue::Str(s) => out.push_str(&quote(s)),
    }
}

fn encode_node(out: &mut String, n: &GraphNode) {
    let _ = write!(out, "{{\"id\": {}, \"op_type\": \"{}\", \"inputs\": ", quote(&n.id), n.op_type);
    push_list(out, &n.inputs, |o, s| o.push_str(&quote(s)));
    out.push_str(", \"outputs\": ");
    push_list(out, &n.outputs, |o, s| o.push_str(&quote(s)));
    out.push_str(", \"attributes\": {");
    for (i, (k, v)) in n.attributes.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}: ", quote(k));
        encode_attr(out, v);
    }
    out.push_str("}}");
}

fn push_block<T>(out: &mut String, key: &str, items: &[T], mut each: impl FnMut(&mut String, &T), last: bool) {
    let _ = write!(out, "  \"{key}\": ");
    if items.is_empty() {
        out.push_str("[]");
    } else {
        out.push_str("[\n");
        for (i, item) in items.iter().enumerate() {
            out.push_str("    ");
            each(out, item);
            out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
        }
        out.push_str("  ]");
    }
    out.push_str(if last { "\n" } else { ",\n" });
}

/// Canonical bytes of `g`.
pub fn serialize_graph(g: &InterchangeGraph) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"name\": {},", quote(&g.name));
    let _ = writeln!(out, "  \"ir_version\": {},", g.ir_version);
    push_block(&mut out, "inputs", &g.inputs, encode_tensor, false);
    push_block(&mut out, "outputs", &g.outputs, encode_tensor, false);
    push_block(&mut out, "initializers", &g.sorted_initializers(), |o, t| encode_tensor(o, t), false);
    push_block(&mut out, "nodes", &g.sorted_nodes(), |o, n| encode_node(o, n), false);
    let doc = g.doc.as_deref().map_or_else(|| "null".to_string(), quote);
    let _ = writeln!(out, "  \"doc\": {doc}");
    out.push_str("}\n");
    out.into_bytes()
}

/// Canonical bytes of a tensor set: an array sorted by tensor name.
pub fn serialize_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Vec<u8> {
    let mut ts: Vec<&Tensor> = tensors.into_iter().collect();
    ts.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = String::new();
    if ts.is_empty() {
        out.push_str("[]\n");
    } else {
        out.push_str("[\n");
        for (i, t) in ts.iter().enumerate() {
            out.push_str("  ");
            encode_tensor(&mut out, t);
            out.push_str(if i + 1 < ts.len() { ",\n" } else { "\n" });
        }
        out.push_str("]\n");
    }
    out.into_bytes()
}

fn malformed(msg: impl Into<String>) -> GraphError {
    GraphError::Malformed(msg.into())
}

fn parse_document(bytes: &[u8]) -> Result<Value, GraphError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| malformed(format!("invalid JSON: {e}")))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], what: &str) -> Result<(), GraphError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(malformed(format!("unexpected key {k:?} in {what}"))),
        None => Ok(()),
    }
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, what: &str) -> Result<&'a str, GraphError> {
    obj.get(key)
        .ok_or_else(|| malformed(format!("{what} is missing {key:?}")))?
        .as_str()
        .ok_or_else(|| malformed(format!("{what} field {key:?} must be a string")))
}

fn get_array<'a>(obj: &'a Map<String, Value>, key: &str, what: &str) -> Result<&'a Vec<Value>, GraphError> {
    obj.get(key)
        .ok_or_else(|| malformed(format!("{what} is missing {key:?}")))?
        .as_array()
        .ok_or_else(|| malformed(format!("{what} field {key:?} must be an array")))
}

fn string_list(values: &[Value], what: &str) -> Result<Vec<String>, GraphError> {
    values
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| malformed(format!("{what} must hold strings"))))
        .collect()
}

fn float_value(v: &Value, what: &str) -> Result<f64, GraphError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| malformed(format!("{what}: unrepresentable number"))),
        Value::String(s) => match s.as_str() {
            "NaN" => Ok(f64::NAN),
            "Infinity" => Ok(f64::INFINITY),
            "-Infinity" => Ok(f64::NEG_INFINITY),
            _ => Err(malformed(format!("{what}: {s:?} is not a number"))),
        },
        _ => Err(malformed(format!("{what}: expected a number"))),
    }
}

/// Decodes one tensor object.
pub fn decode_tensor(v: &Value) -> Result<Tensor, GraphError> {
    let obj = v.as_object().ok_or_else(|| malformed("tensor must be an object"))?;
    check_keys(obj, &["name", "dtype", "shape", "data"], "tensor")?;
    let name = get_str(obj, "name", "tensor")?.to_string();
    let what = format!("tensor {name:?}");
    let dtype_s = get_str(obj, "dtype", &what)?;
    let dtype = DType::parse(dtype_s).ok_or_else(|| malformed(format!("{what}: unknown dtype {dtype_s:?}")))?;
    let shape = get_array(obj, "shape", &what)?
        .iter()
        .map(|d| {
            d.as_u64()
                .and_then(|d| usize::try_from(d).ok())
                .ok_or_else(|| malformed(format!("{what}: shape entries must be non-negative integers")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let data = match obj.get("data") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(match dtype {
            DType::F64 => TensorData::F64(items.iter().map(|x| float_value(x, &what)).collect::<Result<_, _>>()?),
            DType::F32 => TensorData::F32(
                items.iter().map(|x| float_value(x, &what).map(|f| f as f32)).collect::<Result<_, _>>()?,
            ),
            DType::I64 => TensorData::I64(
                items
                    .iter()
                    .map(|x| x.as_i64().ok_or_else(|| malformed(format!("{what}: i64 data must be integers"))))
                    .collect::<Result<_, _>>()?,
            ),
        }),
        Some(_) => return Err(malformed(format!("{what}: data must be an array"))),
    };
    Ok(Tensor { name, dtype, shape, data })
}

fn decode_attr(v: &Value, what: &str) -> Result<AttrValue, GraphError> {
    match v {
        Value::Number(n) => n.as_i64().map(AttrValue::Int).ok_or_else(|| malformed(format!("{what}: integer expected"))),
        Value::String(s) => Ok(AttrValue::Str(s.clone())),
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_i64().ok_or_else(|| malformed(format!("{what}: integer list expected"))))
            .collect::<Result<_, _>>()
            .map(AttrValue::Ints),
        _ => Err(malformed(format!("{what}: unsupported attribute value"))),
    }
}

fn decode_node(v: &Value) -> Result<GraphNode, GraphError> {
    let obj = v.as_object().ok_or_else(|| malformed("node must be an object"))?;
    check_keys(obj, &["id", "op_type", "inputs", "outputs", "attributes"], "node")?;
    let id = get_str(obj, "id", "node")?.to_string();
    let what = format!("node {id:?}");
    let op_type: OpType = get_str(obj, "op_type", &what)?.parse()?;
    let inputs = string_list(get_array(obj, "inputs", &what)?, &what)?;
    let outputs = string_list(get_array(obj, "outputs", &what)?, &what)?;
    let mut attributes = BTreeMap::new();
    match obj.get("attributes") {
        None | Some(Value::Null) => {}
        Some(Value::Object(attrs)) => {
            for (k, v) in attrs {
                attributes.insert(k.clone(), decode_attr(v, &format!("{what} attribute {k:?}"))?);
            }
        }
        Some(_) => return Err(malformed(format!("{what}: attributes must be an object"))),
    }
    Ok(GraphNode { id, op_type, inputs, outputs, attributes })
}

fn tensor_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<Tensor>, GraphError> {
    get_array(obj, key, "graph")?.iter().map(decode_tensor).collect()
}

/// Parses an interchange document. Structural validity is not checked here;
/// run [`InterchangeGraph::validate`] on the result.
pub fn parse_graph(bytes: &[u8]) -> Result<InterchangeGraph, GraphError> {
    let doc = parse_document(bytes)?;
    let obj = doc.as_object().ok_or_else(|| malformed("graph document must be an object"))?;
    check_keys(obj, &["name", "ir_version", "inputs", "outputs", "initializers", "nodes", "doc"], "graph")?;
    let ir_version = match obj.get("ir_version") {
        None | Some(Value::Null) => return Err(GraphError::MissingIrVersion),
        Some(v) => v.as_i64().ok_or_else(|| malformed("ir_version must be an integer"))?,
    };
    let name = get_str(obj, "name", "graph")?.to_string();
    let nodes = get_array(obj, "nodes", "graph")?.iter().map(decode_node).collect::<Result<_, _>>()?;
    let doc = match obj.get("doc") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(malformed("doc must be a string or null")),
    };
    Ok(InterchangeGraph {
        name,
        ir_version,
        inputs: tensor_list(obj, "inputs")?,
        outputs: tensor_list(obj, "outputs")?,
        initializers: tensor_list(obj, "initializers")?,
        nodes,
        doc,
    })
}

/// Parses a tensor-set document (an array of tensor objects).
pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<Tensor>, GraphError> {
    let doc = parse_document(bytes)?;
    doc.as_array()
        .ok_or_else(|| malformed("tensor file must be an array"))?
        .iter()
        .map(decode_tensor)
        .collect()
}
