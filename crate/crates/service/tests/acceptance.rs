//! The acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{copy_tree, fixture, fixtures, Harness};
use hpcfair::api::router;
use hpcfair::client::ModelApi;
use hpcfair_core::converters::{convert_checkpoint, Backend};
use hpcfair_core::interchange::{infer_declared, parse_graph, serialize_graph};
use hpcfair_core::registry::{ArtifactDraft, ArtifactRecord, ArtifactType, Role};
use hpcfair_core::runtime::{execute, execute_all, NamedTensorSet};
use hpcfair_core::sandbox::{parse_manifest, Sandbox};
use hpcfair_core::tasks::{parse_config, Dispatcher, OneOrMany, TaskConfig, TaskContext};
use hpcfair_core::{DType, OpType, Tensor};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{all_close, eval_layerdag, eval_sequential, oracle_all, random_graph, Dense};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok_or<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

/// GET requests issued against the shared store, replayed after a restart.
struct Recorder {
    calls: Vec<(Option<String>, String, u16, Vec<u8>)>,
}

impl Recorder {
    async fn get(&mut self, api: &ModelApi, token: Option<&str>, path: &str) -> hpcfair::RawResponse {
        let r = api.request("GET", path, None, Vec::new()).await.expect("in-process transport");
        self.calls.push((token.map(str::to_string), path.to_string(), r.status, r.body.clone()));
        r
    }
}

fn c1_golden_configs() -> Outcome {
    for n in [1, 2, 4] {
        let cfg = ok_or(parse_config(&fixture(&format!("demo/listing{n}.yaml"))), "parse")?;
        let golden = String::from_utf8(fixture(&format!("goldens/listing{n}.canonical.yaml"))).expect("utf-8 golden");
        ensure!(cfg.to_canonical_text() == golden, "listing {n} canonical text differs from golden");
    }
    let l1 = parse_config(&fixture("demo/listing1.yaml")).unwrap();
    ensure!(l1.task_args.onnx_version == Some(10), "onnx_version");
    ensure!(l1.device.worker_num == Some(4), "worker_num");
    ensure!(l1.general.backend == Some(OneOrMany::Many(vec!["pt".into(), "tf".into()])), "backend list");
    ensure!(l1.device.gpu_mapping_file.as_deref() == Some(""), "gpu_mapping_file");
    ensure!(
        l1.out.export_file == Some(OneOrMany::Many(vec!["encoder.onnx".into(), "decoder.onnx".into()])),
        "export_file list"
    );
    let l2 = parse_config(&fixture("demo/listing2.yaml")).unwrap();
    ensure!(l2.general.tag.as_deref() == Some("collaboration") && l2.task_args.input.as_deref() == Some("input.txt"), "listing 2 keys");
    let l4 = parse_config(&fixture("demo/listing4.yaml")).unwrap();
    ensure!(l4.task_args.volume.as_deref() == Some("/app"), "volume");
    ensure!(l4.task_args.build_tag.as_deref() == Some("image_name"), "build_tag");
    ensure!(l4.device.device.as_deref() == Some("gpu"), "device");
    Ok(())
}

fn c2_collaboration_equivalence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixtures().join("demo"), dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let input = NamedTensorSet::from_tensors([Tensor::f64("x", vec![1, 4], x.clone())]).unwrap();
    std::fs::write(dir.path().join("input.txt"), input.to_bytes()).unwrap();

    let dispatcher = Dispatcher::new(TaskContext::new(dir.path()));
    for listing in ["listing1.yaml", "listing2.yaml"] {
        let cfg = parse_config(&std::fs::read(dir.path().join(listing)).unwrap()).unwrap();
        let r = dispatcher.dispatch(&cfg);
        ensure!(r.succeeded(), "{listing}: {:?}", r.error);
    }
    let out = ok_or(NamedTensorSet::parse(&std::fs::read(dir.path().join("out.txt")).unwrap()), "output file")?;
    let got = Dense::from_tensor(out.get("decoder/probs").ok_or("missing decoder/probs")?).data;

    let enc: serde_json::Value = serde_json::from_slice(&fixture("demo/ckpt/encoder.ckpt")).unwrap();
    let dec: serde_json::Value = serde_json::from_slice(&fixture("demo/ckpt/decoder.ckpt")).unwrap();
    let want = eval_layerdag(&dec, &eval_sequential(&enc, &x));
    ensure!(all_close(&got, &want, 1e-6), "runtime {got:?} vs oracle {want:?}");
    Ok(())
}

async fn c3_three_calls(h: &Harness) -> Outcome {
    let api = h.api(Some(&h.reader));
    ok_or(api.conversion(h.work().join("listing1.yaml")).await, "conversion")?;
    let inference = ok_or(api.collaborate(h.work().join("listing2.yaml")).await, "collaborate")?;
    let container = ok_or(api.container(h.work().join("listing4.yaml")).await, "container")?;
    ensure!(api.verb_calls().len() == 3, "expected 3 client calls, saw {:?}", api.verb_calls());
    ensure!(inference.outputs.len() == 1 && container.outputs.len() == 1, "unexpected outputs");
    let out = std::fs::read_to_string(h.work().join("out.txt")).unwrap();
    ensure!(out == "THE QUICK BROWN FOX\nJUMPS OVER THE LAZY DOG\n", "container output {out:?}");
    Ok(())
}

fn draft(title: &str, t: ArtifactType, backend: &str, tags: &[&str]) -> ArtifactDraft {
    ArtifactDraft::new(title, t, backend).with_tags(tags.iter().copied())
}

async fn c4_auto_conversion(h: &Harness, rec: &mut Recorder) -> Outcome {
    let api = h.api(Some(&h.publisher));
    for (backend, file) in [("pt", "demo/ckpt/encoder.ckpt"), ("tf", "demo/ckpt/decoder.ckpt")] {
        let before = h.state.registry.len();
        let reg = ok_or(api.push(&draft(backend, ArtifactType::Model, backend, &["demo"]), &fixture(file)).await, "push")?;
        ensure!(reg.records().count() == 2, "{backend}: expected 2 records");
        ensure!(h.state.registry.len() == before + 2, "{backend}: store grew by {}", h.state.registry.len() - before);
        let c = reg.companion.as_ref().unwrap();
        ensure!(c.provenance.len() == 1 && c.provenance[0].parent_pid == reg.record.pid, "provenance edge");
        ensure!(serde_json::to_value(c.provenance[0].operation).unwrap() == "converted-from", "provenance operation");
        rec.get(&h.api(None), None, &format!("/v1/artifacts/{}", c.pid)).await;
    }
    let g = convert_checkpoint(Backend::Pt, &fixture("demo/ckpt/encoder.ckpt"), "standalone", 10).unwrap();
    let before = h.state.registry.len();
    let reg = ok_or(api.push(&draft("standalone", ArtifactType::Model, "onnx", &["demo"]), &serialize_graph(&g)).await, "push onnx")?;
    ensure!(reg.records().count() == 1 && h.state.registry.len() == before + 1, "onnx push should add one record");
    rec.get(&h.api(None), None, "/v1/search?tags=demo").await;
    Ok(())
}

async fn c5_uniqueness(h: &Harness, rec: &mut Recorder) -> Outcome {
    let api = h.api(Some(&h.publisher));
    let first = ok_or(api.push(&draft("unique", ArtifactType::Dataset, "csv", &[]), b"exactly these bytes").await, "push")?;
    let again = api.push_raw(&draft("copy", ArtifactType::Dataset, "csv", &[]), b"exactly these bytes").await.unwrap();
    let body: serde_json::Value = serde_json::from_slice(&again.body).unwrap();
    ensure!(again.status == 409 && body["error"]["code"] == "duplicate_content", "duplicate accepted: {body}");
    ensure!(body["data"]["pid"] == first.record.pid.as_str(), "duplicate did not return the original pid");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut contents = HashSet::new();
    while contents.len() < 1000 {
        contents.insert((0..rng.random_range(8..40)).map(|_| rng.random::<u8>()).collect::<Vec<u8>>());
    }
    let token = h.publisher.clone();
    let mut pids = HashSet::new();
    for c in &contents {
        let r = ok_or(h.state.registry.register_artifact(c, draft("bulk", ArtifactType::Dataset, "bin", &["bulk"]), Some(&token)), "bulk")?;
        pids.insert(r.record.pid);
    }
    ensure!(pids.len() == 1000, "{} distinct pids for 1000 contents", pids.len());
    rec.get(&h.api(None), None, &format!("/v1/artifacts/{}", first.record.pid)).await;
    Ok(())
}

async fn c6_search(h: &Harness, rec: &mut Recorder) -> Outcome {
    const VOCAB: [&str; 8] = ["nlp", "vision", "encoder", "decoder", "hpc", "gnn", "fair", "bench"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..200 {
        let tags: Vec<&str> = VOCAB.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
        let backend = *["csv", "parquet", "bin"].choose(&mut rng).unwrap();
        let d = draft(&format!("random {i}"), ArtifactType::Dataset, backend, &tags);
        ok_or(h.state.registry.register_artifact(format!("random artifact {i}").as_bytes(), d, Some(&h.publisher)), "register")?;
        if rng.random_bool(0.3) {
            h.clock.advance(chrono::Duration::seconds(1));
        }
    }
    let all = h.state.registry.records();
    let api = h.api(None);
    for _ in 0..50 {
        let mut tags: Vec<&str> = VOCAB.iter().copied().filter(|_| rng.random_bool(0.25)).collect();
        if tags.is_empty() {
            tags.push(VOCAB.choose(&mut rng).unwrap());
        }
        let backend = rng.random_bool(0.3).then(|| *["csv", "parquet", "bin"].choose(&mut rng).unwrap());
        let mut params = vec![("tags", tags.join(","))];
        if let Some(b) = backend {
            params.push(("backend", b.to_string()));
        }
        let borrowed: Vec<(&str, &str)> = params.iter().map(|(k, v)| (*k, v.as_str())).collect();
        let path = ModelApi::search_path(&borrowed);
        let raw = rec.get(&api, None, &path).await;
        let got: Vec<ArtifactRecord> = ok_or(raw.decode(), "search")?;
        let mut want: Vec<&ArtifactRecord> = all
            .iter()
            .filter(|r| tags.iter().all(|t| r.tags.contains(*t)) && backend.is_none_or(|b| r.backend_tag == b))
            .collect();
        want.sort_by_key(|r| (std::cmp::Reverse(r.created_at), r.pid.clone()));
        let got_pids: Vec<&str> = got.iter().map(|r| r.pid.as_str()).collect();
        let want_pids: Vec<&str> = want.iter().map(|r| r.pid.as_str()).collect();
        ensure!(got_pids == want_pids, "query {path}: {} hits vs {} expected", got_pids.len(), want_pids.len());
    }
    Ok(())
}

async fn c7_access_control(h: &Harness, rec: &mut Recorder) -> Outcome {
    let pid = ok_or(h.api(Some(&h.publisher)).push(&draft("guarded", ArtifactType::Dataset, "csv", &[]), b"guarded").await, "push")?.record.pid;
    let meta = rec.get(&h.api(None), None, &format!("/v1/artifacts/{pid}")).await;
    ensure!(meta.status == 200, "metadata without token: {}", meta.status);
    let content = format!("/v1/artifacts/{pid}/content");
    let denied = rec.get(&h.api(None), None, &content).await;
    ensure!(denied.status == 401, "content without token: {}", denied.status);
    let allowed = rec.get(&h.api(Some(&h.reader)), Some(&h.reader), &content).await;
    ensure!(allowed.status == 200 && allowed.body == b"guarded", "content with reader token: {}", allowed.status);
    let reader_push = h.api(Some(&h.reader)).push_raw(&draft("nope", ArtifactType::Dataset, "csv", &[]), b"reader bytes").await.unwrap();
    ensure!(reader_push.status == 403, "push with reader token: {}", reader_push.status);
    let pub_push = h.api(Some(&h.publisher)).push_raw(&draft("yes", ArtifactType::Dataset, "csv", &[]), b"publisher bytes").await.unwrap();
    ensure!(pub_push.status == 201, "push with publisher token: {}", pub_push.status);

    let short = h.state.registry.issue_token("carol", Role::Reader, 30).unwrap().token;
    h.clock.advance(chrono::Duration::seconds(31));
    let expired = rec.get(&h.api(Some(&short)), Some(&short), &content).await;
    let body: serde_json::Value = serde_json::from_slice(&expired.body).unwrap();
    ensure!(expired.status == 401 && body["error"]["code"] == "token_expired", "expired token: {body}");
    let unknown = rec.get(&h.api(Some("bogus")), Some("bogus"), &content).await;
    let body: serde_json::Value = serde_json::from_slice(&unknown.body).unwrap();
    ensure!(body["error"]["code"] == "unauthorized", "unknown token: {body}");
    Ok(())
}

fn c8_runtime_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..200 {
        let (g, inputs) = random_graph(&mut rng, 10, DType::F64);
        let env = ok_or(execute_all(&g, &inputs), "execute")?;
        let want = oracle_all(&g, &inputs);
        let inferred = ok_or(infer_declared(&g), "infer")?;
        for (name, w) in &want {
            let got = Dense::from_tensor(&env[name]);
            ensure!(got.shape == w.shape && inferred[name] == got.shape, "case {case}: shape of {name}");
            ensure!(all_close(&got.data, &w.data, 1e-6), "case {case}: {name} {:?} vs {:?}", got.data, w.data);
        }
        ok_or(execute(&g, &inputs), "declared outputs")?;
        for node in g.nodes.iter().filter(|n| n.op_type == OpType::Softmax) {
            let t = Dense::from_tensor(&env[&node.outputs[0]]);
            let rank = t.shape.len() as i64;
            let a = node.attr_int("axis").unwrap();
            let axis = (if a < 0 { a + rank } else { a }) as usize;
            let (outer, len) = (t.shape[..axis].iter().product::<usize>(), t.shape[axis]);
            let inner: usize = t.shape[axis + 1..].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..len).map(|j| t.data[(o * len + j) * inner + i]).sum();
                    ensure!((s - 1.0).abs() <= 1e-6, "case {case}: softmax slice sums to {s}");
                }
            }
        }
    }
    Ok(())
}

fn c9_canonical_serialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let dtype = if case % 2 == 0 { DType::F64 } else { DType::F32 };
        let (g, _) = random_graph(&mut rng, 10, dtype);
        let bytes = serialize_graph(&g);
        let back = ok_or(parse_graph(&bytes), "parse")?;
        ensure!(back == g && serialize_graph(&back) == bytes, "case {case}: round trip changed the graph");
        let mut permuted = g.clone();
        permuted.nodes.shuffle(&mut rng);
        permuted.initializers.shuffle(&mut rng);
        ensure!(serialize_graph(&permuted) == bytes, "case {case}: insertion order changed the bytes");
    }
    Ok(())
}

fn c10_sandbox() -> Outcome {
    let root = fixtures().join("projects");
    let state = tempfile::tempdir().unwrap();
    let sandbox = Sandbox::new(state.path());
    let mut digests = BTreeMap::new();
    for name in ["stable", "clock"] {
        let manifest = ok_or(parse_manifest(&std::fs::read(root.join(format!("{name}.json"))).unwrap()), "manifest")?;
        let image = ok_or(sandbox.build_image(&manifest, &root.join(name)), "build")?;
        let a = ok_or(sandbox.run_container(&image, None, "cpu"), "run")?.record;
        let b = ok_or(sandbox.run_container(&image, None, "cpu"), "run")?.record;
        ensure!(a.error.is_none() && b.error.is_none(), "{name}: {:?} {:?}", a.error, b.error);
        ensure!(ok_or(image.current_digest(), "digest")? == image.image_digest, "{name}: staged image changed");
        digests.insert(name, (a.output_digest, b.output_digest));
    }
    ensure!(digests["stable"].0 == digests["stable"].1, "deterministic project diverged");
    ensure!(digests["clock"].0 != digests["clock"].1, "nondeterminism not detected");
    Ok(())
}

fn conversion(i: usize, export_dir: &str) -> TaskConfig {
    let text = format!(
        "general_args:\n  task: \"conversion\"\n  backend: [\"pt\", \"tf\"]\n\ndevice_args:\n  worker_num: 2\n\nmodel_args:\n  model_name: [\"enc{i}\", \"dec{i}\"]\n  model_file: [\"ckpt/encoder.ckpt\", \"ckpt/decoder.ckpt\"]\n  onnx_version: 10\n\nout_args:\n  export_file: [\"{export_dir}/enc{i}.onnx\", \"{export_dir}/dec{i}.onnx\"]\n"
    );
    parse_config(text.as_bytes()).expect("generated config parses")
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn c11_scheduling() -> Outcome {
    let configs: Vec<TaskConfig> = (0..8).map(|i| conversion(i, "run")).collect();
    let mut seen: Option<BTreeMap<String, Vec<u8>>> = None;
    for workers in [1, 2, 4] {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixtures().join("demo"), dir.path());
        std::fs::create_dir(dir.path().join("run")).unwrap();
        let results = Dispatcher::new(TaskContext::new(dir.path())).submit_many(&configs, workers);
        ensure!(results.iter().all(|r| r.succeeded()), "worker_num {workers}: a task failed");
        let out = outputs(&dir.path().join("run"));
        ensure!(out.len() == 16, "worker_num {workers}: {} outputs", out.len());
        if let Some(prev) = &seen {
            ensure!(*prev == out, "worker_num {workers}: outputs differ");
        }
        seen = Some(out);
    }
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixtures().join("demo"), dir.path());
    let results = Dispatcher::new(TaskContext::new(dir.path())).submit_many(&[conversion(1, "."), conversion(1, ".")], 2);
    let ok = results.iter().filter(|r| r.succeeded()).count();
    let collisions = results.iter().filter(|r| r.error.as_ref().is_some_and(|e| e.code == "export_collision")).count();
    ensure!(ok == 1 && collisions == 1, "{ok} successes, {collisions} collisions");
    Ok(())
}

async fn c12_persistence(h: &Harness, rec: &Recorder) -> Outcome {
    ensure!(rec.calls.len() >= 50, "only {} recorded reads", rec.calls.len());
    let fresh = h.restarted();
    ensure!(fresh.registry.records() == h.state.registry.records(), "rebuilt records differ");
    let app = router(fresh);
    for (token, path, status, body) in &rec.calls {
        let api = match token {
            Some(t) => ModelApi::in_process(app.clone()).with_token(t.clone()),
            None => ModelApi::in_process(app.clone()),
        };
        let r = api.request("GET", path, None, Vec::new()).await.expect("in-process transport");
        ensure!(r.status == *status && r.body == *body, "{path}: response changed after restart");
    }
    Ok(())
}

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, n: usize, name: &str, limit: Duration, started: Instant, outcome: Outcome) {
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed <= limit {
                Ok(())
            } else {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(()) => println!("PASS criterion {n:>2}: {name} ({} ms)", elapsed.as_millis()),
            Err(e) => {
                self.failed += 1;
                println!("FAIL criterion {n:>2}: {name} ({} ms): {e}", elapsed.as_millis());
            }
        }
    }
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let mut report = Report { failed: 0 };
    let secs = Duration::from_secs;

    let t = Instant::now();
    report.record(1, "golden-config fidelity", secs(1), t, c1_golden_configs());
    let t = Instant::now();
    report.record(2, "collaboration demo equivalence", secs(1), t, c2_collaboration_equivalence());

    let h = Harness::new();
    let mut rec = Recorder { calls: Vec::new() };
    rt.block_on(async {
        let t = Instant::now();
        report.record(3, "three-call ergonomics", secs(5), t, c3_three_calls(&h).await);
        let t = Instant::now();
        report.record(4, "auto-conversion on push", secs(1), t, c4_auto_conversion(&h, &mut rec).await);
        let t = Instant::now();
        report.record(5, "uniqueness check", secs(5), t, c5_uniqueness(&h, &mut rec).await);
        let t = Instant::now();
        report.record(6, "search soundness and completeness", secs(2), t, c6_search(&h, &mut rec).await);
        let t = Instant::now();
        report.record(7, "access control", secs(1), t, c7_access_control(&h, &mut rec).await);
    });

    let t = Instant::now();
    report.record(8, "runtime vs oracle", secs(10), t, c8_runtime_oracle());
    let t = Instant::now();
    report.record(9, "serialization canonicality", secs(5), t, c9_canonical_serialization());
    let t = Instant::now();
    report.record(10, "sandbox reproducibility", secs(3), t, c10_sandbox());
    let t = Instant::now();
    report.record(11, "scheduling independence", secs(5), t, c11_scheduling());

    rt.block_on(async {
        let t = Instant::now();
        report.record(12, "persistence round trip", secs(2), t, c12_persistence(&h, &rec).await);
    });

    if report.failed > 0 {
        println!("{} of 12 criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
