mod support;

use std::path::PathBuf;

use hpcfair_core::converters::{convert_checkpoint, Backend};
use hpcfair_core::interchange::{compose_graphs, positional_binding, serialize_graph};
use hpcfair_core::runtime::{execute, NamedTensorSet};
use hpcfair_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use support::{all_close, eval_layerdag, eval_sequential, Dense};

fn fixture(rel: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn run_single(g: &hpcfair_core::InterchangeGraph, input: &str, x: &[f64]) -> Vec<f64> {
    let width = x.len();
    let inputs = NamedTensorSet::from_tensors([Tensor::f64(input, vec![1, width], x.to_vec())]).unwrap();
    let out = execute(g, &inputs).unwrap();
    let first = out.iter().next().unwrap();
    Dense::from_tensor(first).data
}

#[test]
fn demo_pair_matches_direct_evaluation() {
    let enc_bytes = fixture("demo/ckpt/encoder.ckpt");
    let dec_bytes = fixture("demo/ckpt/decoder.ckpt");
    let enc = convert_checkpoint(Backend::Pt, &enc_bytes, "encoder", 10).unwrap();
    let dec = convert_checkpoint(Backend::Tf, &dec_bytes, "decoder", 10).unwrap();
    let composed = compose_graphs(&enc, &dec, &positional_binding(&enc, &dec).unwrap()).unwrap();

    let enc_json: Value = serde_json::from_slice(&enc_bytes).unwrap();
    let dec_json: Value = serde_json::from_slice(&dec_bytes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let want = eval_layerdag(&dec_json, &eval_sequential(&enc_json, &x));
        let got = run_single(&composed, "encoder/x", &x);
        assert!(all_close(&got, &want, 1e-6), "{got:?} vs {want:?}");
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn conversion_is_deterministic() {
    let bytes = fixture("demo/ckpt/encoder.ckpt");
    let a = serialize_graph(&convert_checkpoint(Backend::Pt, &bytes, "encoder", 10).unwrap());
    let b = serialize_graph(&convert_checkpoint(Backend::Pt, &bytes, "encoder", 10).unwrap());
    assert_eq!(a, b);
}

fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn random_sequential(rng: &mut impl Rng) -> (Value, usize) {
    let input = rng.random_range(1..=6);
    let mut width = input;
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=5) {
        match rng.random_range(0..5) {
            0 | 1 => {
                let out = rng.random_range(1..=6);
                layers.push(json!({"kind": "linear", "weight": matrix(rng, out, width), "bias": vector(rng, out)}));
                width = out;
            }
            2 => layers.push(json!({"kind": "relu"})),
            3 => layers.push(json!({"kind": "tanh"})),
            _ => layers.push(json!({"kind": "sigmoid"})),
        }
    }
    (json!({"format_tag": "pt-ckpt-v1", "input_dim": input, "layers": layers}), input)
}

fn random_layerdag(rng: &mut impl Rng) -> (Value, usize) {
    let input = rng.random_range(1..=6);
    let mut width = input;
    let mut prev = "x".to_string();
    let mut nodes = serde_json::Map::new();
    for i in 0..rng.random_range(1..=5) {
        let name = format!("l{i}");
        let node = match rng.random_range(0..5) {
            0 | 1 => {
                let out = rng.random_range(1..=6);
                let v = json!({"op": "dense", "inbound": [prev], "params": {"kernel": matrix(rng, width, out), "bias": vector(rng, out)}});
                width = out;
                v
            }
            2 => json!({"op": "relu", "inbound": [prev]}),
            3 => json!({"op": "softmax", "inbound": [prev]}),
            _ => json!({"op": "tanh", "inbound": [prev]}),
        };
        nodes.insert(name.clone(), node);
        prev = name;
    }
    (json!({"format_tag": "tf-ckpt-v1", "inputs": [{"name": "x", "shape": [1, input]}], "nodes": nodes, "outputs": [prev]}), input)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sequential_matches_direct_evaluation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ckpt, width) = random_sequential(&mut rng);
        let g = convert_checkpoint(Backend::Pt, &serde_json::to_vec(&ckpt).unwrap(), "m", 10).unwrap();
        prop_assert!(g.validate().ok);
        let x = vector(&mut rng, width);
        let got = run_single(&g, "x", &x);
        let want = eval_sequential(&ckpt, &x);
        prop_assert!(all_close(&got, &want, 1e-6), "{:?} vs {:?}", got, want);
    }

    #[test]
    fn layerdag_matches_direct_evaluation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ckpt, width) = random_layerdag(&mut rng);
        let g = convert_checkpoint(Backend::Tf, &serde_json::to_vec(&ckpt).unwrap(), "m", 10).unwrap();
        prop_assert!(g.validate().ok);
        let x = vector(&mut rng, width);
        let got = run_single(&g, "x", &x);
        let want = eval_layerdag(&ckpt, &x);
        prop_assert!(all_close(&got, &want, 1e-6), "{:?} vs {:?}", got, want);
    }

    #[test]
    fn composition_equals_sequential_execution(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p_ckpt, width) = random_sequential(&mut rng);
        let p = convert_checkpoint(Backend::Pt, &serde_json::to_vec(&p_ckpt).unwrap(), "p", 10).unwrap();
        let mid = p.outputs[0].shape[1];
        let dense = json!({"op": "dense", "inbound": ["h"], "params": {"kernel": matrix(&mut rng, mid, 3), "bias": vector(&mut rng, 3)}});
        let c_ckpt = json!({"format_tag": "tf-ckpt-v1", "inputs": [{"name": "h", "shape": [1, mid]}], "nodes": {"d": dense}, "outputs": ["d"]});
        let c = convert_checkpoint(Backend::Tf, &serde_json::to_vec(&c_ckpt).unwrap(), "c", 10).unwrap();
        let composed = compose_graphs(&p, &c, &positional_binding(&p, &c).unwrap()).unwrap();
        let x = vector(&mut rng, width);
        let direct = run_single(&c, "h", &run_single(&p, "x", &x));
        let stitched = run_single(&composed, "p/x", &x);
        prop_assert_eq!(direct, stitched);
    }
}
