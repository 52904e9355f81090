use std::collections::BTreeSet;

use super::{convert_checkpoint, Backend};
use crate::interchange::serialize_graph;
use crate::tasks::{run_bounded, TaskConfig, TaskContext, TaskError, TaskLog};

/// Converts each `(backend, model_file)` pair to an interchange file at the
/// matching `export_file`. Nothing is written unless every item converts.
pub fn run_conversion_task(cfg: &TaskConfig, ctx: &TaskContext, log: &mut TaskLog) -> Result<Vec<String>, TaskError> {
    let list = |v: &Option<crate::tasks::OneOrMany>| v.as_ref().map(|v| v.to_vec()).unwrap_or_default();
    let backends = list(&cfg.general.backend);
    let names = list(&cfg.task_args.model_name);
    let files = list(&cfg.task_args.model_file);
    let exports = list(&cfg.out.export_file);
    if backends.len() != names.len() || names.len() != files.len() || files.len() != exports.len() {
        return Err(TaskError::Alignment(format!(
            "backend {}, model_name {}, model_file {}, export_file {}",
            backends.len(),
            names.len(),
            files.len(),
            exports.len()
        )));
    }
    if backends.is_empty() {
        return Err(TaskError::Alignment("no models listed".into()));
    }
    let ir_version = cfg.task_args.onnx_version.ok_or_else(|| TaskError::InvalidConfig(vec!["conversion requires task_args.onnx_version".into()]))?;
    let parsed: Vec<Backend> = backends
        .iter()
        .map(|b| {
            b.parse().map_err(|_| TaskError::UnknownBackend { task: "conversion", backend: b.clone(), expected: "\"pt\" or \"tf\"" })
        })
        .collect::<Result<_, _>>()?;
    let mut targets = Vec::with_capacity(exports.len());
    let mut seen = BTreeSet::new();
    for e in &exports {
        let path = ctx.resolve(e)?;
        if !seen.insert(path.clone()) {
            return Err(TaskError::DuplicateExport(e.clone()));
        }
        targets.push(path);
    }

    let items: Vec<usize> = (0..files.len()).collect();
    let converted = run_bounded(items, cfg.worker_num(), |i| {
        let bytes = ctx.read_source(&files[i])?;
        let g = convert_checkpoint(parsed[i], &bytes, &names[i], ir_version)
            .map_err(|source| TaskError::Convert { path: files[i].clone(), source })?;
        Ok::<_, TaskError>(serialize_graph(&g))
    });
    let converted: Vec<Vec<u8>> = converted.into_iter().collect::<Result<_, _>>()?;

    for (i, bytes) in converted.iter().enumerate() {
        ctx.write_output(&targets[i], bytes, &exports[i])?;
        log.info(format!("converted {} ({}) to {}", files[i], backends[i], exports[i]));
    }
    Ok(targets.iter().map(|p| p.display().to_string()).collect())
}
