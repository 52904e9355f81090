use super::{execute, ExecError, NamedTensorSet};
use crate::interchange::{compose_graphs, parse_graph, positional_binding, GraphError, InterchangeGraph};
use crate::tasks::{TaskConfig, TaskContext, TaskError, TaskLog};

fn load_model(ctx: &TaskContext, file: &str, name: Option<&str>) -> Result<InterchangeGraph, TaskError> {
    let bytes = ctx.read_source(file)?;
    let model_err = |source| TaskError::Model { path: file.to_string(), source };
    let mut g = parse_graph(&bytes).map_err(model_err)?;
    if let Some(name) = name {
        g.name = name.to_string();
    }
    g.validate().into_result().map_err(model_err)?;
    Ok(g)
}

/// Picks graph inputs out of the input file. A composed graph's inputs carry
/// the producer's name as a prefix; the bare name is accepted too.
fn bind_inputs(g: &InterchangeGraph, provided: &NamedTensorSet, prefix: Option<&str>) -> Result<NamedTensorSet, ExecError> {
    let mut set = NamedTensorSet::new();
    for spec in &g.inputs {
        let bare = prefix.and_then(|p| spec.name.strip_prefix(p)).and_then(|s| s.strip_prefix('/'));
        let t = provided
            .get(&spec.name)
            .or_else(|| bare.and_then(|b| provided.get(b)))
            .ok_or_else(|| ExecError::MissingInput(spec.name.clone()))?;
        set.insert(t.clone().with_name(spec.name.clone()))?;
    }
    Ok(set)
}

/// Loads the listed models, composes them when tagged `collaboration`, runs
/// the result on the input file and writes the outputs to the export file.
pub fn run_inference_task(cfg: &TaskConfig, ctx: &TaskContext, log: &mut TaskLog) -> Result<String, TaskError> {
    let backend = cfg.general.backend.as_ref().and_then(|b| b.single()).unwrap_or_default();
    if backend != "onnx" {
        return Err(TaskError::UnknownBackend { task: "inference", backend: backend.to_string(), expected: "\"onnx\"" });
    }
    let files = cfg.task_args.model_file.as_ref().map(|f| f.to_vec()).unwrap_or_default();
    let names = cfg.task_args.model_name.as_ref().map(|n| n.to_vec());
    if let Some(names) = &names {
        if names.len() != files.len() {
            return Err(TaskError::Alignment(format!("model_name {}, model_file {}", names.len(), files.len())));
        }
    }
    let collaboration = cfg.general.tag.as_deref() == Some("collaboration");
    if collaboration && files.len() != 2 {
        return Err(TaskError::Arity(format!("collaboration composes exactly 2 models, got {}", files.len())));
    }
    if !collaboration && files.len() != 1 {
        return Err(TaskError::Arity(format!(
            "inference without the collaboration tag runs exactly 1 model, got {}",
            files.len()
        )));
    }
    let export = cfg.out.export_file.as_ref().and_then(|e| e.single()).ok_or_else(|| {
        TaskError::InvalidConfig(vec!["inference takes exactly one out_args.export_file".into()])
    })?;
    let input_file = cfg.task_args.input.as_deref().ok_or_else(|| TaskError::InvalidConfig(vec!["inference requires task_args.input".into()]))?;
    let export_path = ctx.resolve(export)?;

    let mut models = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let g = load_model(ctx, file, names.as_ref().map(|n| n[i].as_str()))?;
        if let Some(v) = cfg.task_args.onnx_version {
            if v != g.ir_version {
                log.info(format!("warning: {file} has ir_version {} but onnx_version is {v}", g.ir_version));
            }
        }
        log.info(format!("loaded {file} as {}", g.name));
        models.push(g);
    }

    let (graph, prefix) = if collaboration {
        let (p, c) = (&models[0], &models[1]);
        let binding = positional_binding(p, c).map_err(TaskError::Compose)?;
        let g = compose_graphs(p, c, &binding).map_err(TaskError::Compose)?;
        log.info(format!("composed {} -> {} as {}", p.name, c.name, g.name));
        (g, Some(p.name.clone()))
    } else {
        (models.pop().expect("one model"), None)
    };

    let provided = NamedTensorSet::parse(&ctx.read_source(input_file)?).map_err(|e| match e {
        ExecError::TensorFile(m) => TaskError::Model { path: input_file.to_string(), source: GraphError::Malformed(m) },
        other => TaskError::Exec(other),
    })?;
    let inputs = bind_inputs(&graph, &provided, prefix.as_deref())?;
    let outputs = execute(&graph, &inputs)?;
    ctx.write_output(&export_path, &outputs.to_bytes(), export)?;
    log.info(format!("wrote {} output tensor(s) to {export}", outputs.len()));
    Ok(export_path.display().to_string())
}
