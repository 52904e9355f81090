use std::fmt;

use serde::{Deserialize, Serialize};

use super::syntax::{parse_document, render_document, Document, Scalar, Section, Value};
use super::ConfigError;
use crate::digest::sha256_hex;
use crate::interchange::ValidationReport;

/// A string or a flat list of strings; the written form is kept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OneOrMany::One(_) => 1,
            OneOrMany::Many(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single value, if there is exactly one.
    pub fn single(&self) -> Option<&str> {
        match self {
            OneOrMany::One(s) => Some(s),
            OneOrMany::Many(v) if v.len() == 1 => Some(&v[0]),
            _ => None,
        }
    }

    fn to_value(&self) -> Value {
        match self {
            OneOrMany::One(s) => Value::str(s.clone()),
            OneOrMany::Many(v) => Value::List(v.iter().cloned().map(Scalar::Str).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Conversion,
    Inference,
    Container,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Conversion, TaskKind::Inference, TaskKind::Container];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Conversion => "conversion",
            TaskKind::Inference => "inference",
            TaskKind::Container => "container",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Name under which the task section was written.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSectionName {
    #[default]
    TaskArgs,
    ModelArgs,
}

impl TaskSectionName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskSectionName::TaskArgs => "task_args",
            TaskSectionName::ModelArgs => "model_args",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralArgs {
    pub task: String,
    pub tag: Option<String>,
    pub backend: Option<OneOrMany>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceArgs {
    pub worker_num: Option<i64>,
    pub device: Option<String>,
    pub gpu_mapping_file: Option<String>,
    pub gpu_mapping_key: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskArgs {
    pub model_name: Option<OneOrMany>,
    pub model_file: Option<OneOrMany>,
    pub onnx_version: Option<i64>,
    pub input: Option<String>,
    pub work_dir: Option<String>,
    pub build_file: Option<String>,
    pub build_tag: Option<String>,
    pub volume: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutArgs {
    pub export_file: Option<OneOrMany>,
}

/// A key the schema does not define, kept for round trips.
#[derive(Clone, Debug, PartialEq)]
pub struct Extra {
    pub section: String,
    pub key: String,
    pub value: Value,
}

/// A parsed task configuration document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskConfig {
    pub general: GeneralArgs,
    pub device: DeviceArgs,
    /// `None` when the document has neither `task_args` nor `model_args`.
    pub task_section: Option<TaskSectionName>,
    pub task_args: TaskArgs,
    pub out: OutArgs,
    pub extras: Vec<Extra>,
    pub warnings: Vec<String>,
}

fn type_err(section: &str, key: &str, expected: &str) -> ConfigError {
    ConfigError::Type { key: format!("{section}.{key}"), expected: expected.to_string() }
}

fn as_string(section: &str, key: &str, v: Value) -> Result<String, ConfigError> {
    match v {
        Value::Scalar(Scalar::Str(s)) => Ok(s),
        _ => Err(type_err(section, key, "a string")),
    }
}

fn as_int(section: &str, key: &str, v: Value) -> Result<i64, ConfigError> {
    match v {
        Value::Scalar(Scalar::Int(i)) => Ok(i),
        _ => Err(type_err(section, key, "an integer")),
    }
}

fn as_one_or_many(section: &str, key: &str, v: Value) -> Result<OneOrMany, ConfigError> {
    match v {
        Value::Scalar(Scalar::Str(s)) => Ok(OneOrMany::One(s)),
        Value::List(items) => items
            .into_iter()
            .map(|s| match s {
                Scalar::Str(s) => Ok(s),
                _ => Err(type_err(section, key, "a string or a list of strings")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(OneOrMany::Many),
        _ => Err(type_err(section, key, "a string or a list of strings")),
    }
}

impl TaskConfig {
    pub fn parse(text: &[u8]) -> Result<Self, ConfigError> {
        let text = std::str::from_utf8(text).map_err(|e| ConfigError::Syntax { line: 0, message: format!("not UTF-8: {e}") })?;
        Self::from_document(parse_document(text)?)
    }

    pub fn from_document(doc: Document) -> Result<Self, ConfigError> {
        let mut cfg = TaskConfig::default();
        let mut task: Option<String> = None;
        let mut seen_general = false;
        for Section { name, entries, .. } in doc.sections {
            let sec = name.as_str();
            match sec {
                "general_args" => seen_general = true,
                "task_args" | "model_args" => {
                    if cfg.task_section.is_some() {
                        return Err(ConfigError::BothTaskSections);
                    }
                    cfg.task_section =
                        Some(if sec == "task_args" { TaskSectionName::TaskArgs } else { TaskSectionName::ModelArgs });
                }
                "device_args" | "out_args" => {}
                _ => cfg.warnings.push(format!("unknown section {sec}")),
            }
            for (key, value) in entries {
                let k = key.as_str();
                match (sec, k) {
                    ("general_args", "task") => task = Some(as_string(sec, k, value)?),
                    ("general_args", "tag") => cfg.general.tag = Some(as_string(sec, k, value)?),
                    ("general_args", "backend") => cfg.general.backend = Some(as_one_or_many(sec, k, value)?),
                    ("device_args", "worker_num") => cfg.device.worker_num = Some(as_int(sec, k, value)?),
                    ("device_args", "device") => cfg.device.device = Some(as_string(sec, k, value)?),
                    ("device_args", "gpu_mapping_file") => cfg.device.gpu_mapping_file = Some(as_string(sec, k, value)?),
                    ("device_args", "gpu_mapping_key") => cfg.device.gpu_mapping_key = Some(as_string(sec, k, value)?),
                    ("task_args" | "model_args", "model_name") => cfg.task_args.model_name = Some(as_one_or_many(sec, k, value)?),
                    ("task_args" | "model_args", "model_file") => cfg.task_args.model_file = Some(as_one_or_many(sec, k, value)?),
                    ("task_args" | "model_args", "onnx_version") => cfg.task_args.onnx_version = Some(as_int(sec, k, value)?),
                    ("task_args" | "model_args", "input") => cfg.task_args.input = Some(as_string(sec, k, value)?),
                    ("task_args" | "model_args", "work_dir") => cfg.task_args.work_dir = Some(as_string(sec, k, value)?),
                    ("task_args" | "model_args", "build_file") => cfg.task_args.build_file = Some(as_string(sec, k, value)?),
                    ("task_args" | "model_args", "build_tag") => cfg.task_args.build_tag = Some(as_string(sec, k, value)?),
                    ("task_args" | "model_args", "volume") => cfg.task_args.volume = Some(as_string(sec, k, value)?),
                    ("out_args", "export_file") => cfg.out.export_file = Some(as_one_or_many(sec, k, value)?),
                    _ => {
                        if matches!(sec, "general_args" | "device_args" | "task_args" | "model_args" | "out_args") {
                            cfg.warnings.push(format!("unknown key {sec}.{k}"));
                        }
                        cfg.extras.push(Extra { section: name.clone(), key, value });
                    }
                }
            }
        }
        if !seen_general {
            return Err(ConfigError::MissingSection("general_args"));
        }
        cfg.general.task = task.ok_or(ConfigError::MissingKey("general_args.task"))?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Option<TaskKind> {
        TaskKind::parse(&self.general.task)
    }

    pub fn worker_num(&self) -> usize {
        self.device.worker_num.filter(|&n| n >= 1).map_or(1, |n| n as usize)
    }

    pub fn to_document(&self) -> Document {
        fn push<T>(entries: &mut Vec<(String, Value)>, key: &str, v: &Option<T>, f: impl Fn(&T) -> Value) {
            if let Some(v) = v {
                entries.push((key.to_string(), f(v)));
            }
        }
        let s = |v: &String| Value::str(v.clone());
        let i = |v: &i64| Value::Scalar(Scalar::Int(*v));
        let many = |v: &OneOrMany| v.to_value();

        let mut general = vec![("task".to_string(), Value::str(self.general.task.clone()))];
        push(&mut general, "tag", &self.general.tag, s);
        push(&mut general, "backend", &self.general.backend, many);

        let mut device = Vec::new();
        push(&mut device, "worker_num", &self.device.worker_num, i);
        push(&mut device, "device", &self.device.device, s);
        push(&mut device, "gpu_mapping_file", &self.device.gpu_mapping_file, s);
        push(&mut device, "gpu_mapping_key", &self.device.gpu_mapping_key, s);

        let t = &self.task_args;
        let mut task = Vec::new();
        push(&mut task, "model_name", &t.model_name, many);
        push(&mut task, "model_file", &t.model_file, many);
        push(&mut task, "onnx_version", &t.onnx_version, i);
        push(&mut task, "input", &t.input, s);
        push(&mut task, "work_dir", &t.work_dir, s);
        push(&mut task, "build_file", &t.build_file, s);
        push(&mut task, "build_tag", &t.build_tag, s);
        push(&mut task, "volume", &t.volume, s);

        let mut out = Vec::new();
        push(&mut out, "export_file", &self.out.export_file, many);

        let task_name = self.task_section.unwrap_or_default().as_str();
        let mut sections: Vec<Section> = [
            ("general_args", general),
            ("device_args", device),
            (task_name, task),
            ("out_args", out),
        ]
        .into_iter()
        .map(|(name, entries)| Section { name: name.to_string(), line: 0, entries })
        .collect();
        for extra in &self.extras {
            let pos = match sections.iter().position(|s| s.name == extra.section) {
                Some(p) => p,
                None => {
                    sections.push(Section { name: extra.section.clone(), line: 0, entries: Vec::new() });
                    sections.len() - 1
                }
            };
            sections[pos].entries.push((extra.key.clone(), extra.value.clone()));
        }
        sections.retain(|s| s.name == "general_args" || !s.entries.is_empty());
        Document { sections }
    }

    /// Canonical text: fixed section and key order, double-quoted strings,
    /// inline lists, a blank line between sections.
    pub fn to_canonical_text(&self) -> String {
        render_document(&self.to_document())
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_canonical_text().as_bytes())
    }
}

/// Checks that `cfg` can be dispatched.
pub fn validate_config(cfg: &TaskConfig) -> ValidationReport {
    let mut v: Vec<String> = Vec::new();
    let kind = cfg.kind();
    if kind.is_none() {
        v.push(format!(
            "general_args.task must be one of conversion, inference, container, got {:?}",
            cfg.general.task
        ));
    }
    if let Some(n) = cfg.device.worker_num {
        if n < 1 {
            v.push("worker_num must be ≥ 1".to_string());
        }
    }
    if let Some(d) = &cfg.device.device {
        if d != "cpu" && d != "gpu" {
            v.push(format!("device_args.device must be \"cpu\" or \"gpu\", got {d:?}"));
        }
    }
    if cfg.task_section.is_none() {
        v.push("missing task_args (or model_args) section".to_string());
    }
    match &cfg.out.export_file {
        None => v.push("out_args.export_file is required".to_string()),
        Some(e) if e.is_empty() => v.push("out_args.export_file must not be empty".to_string()),
        Some(e) if e.to_vec().iter().any(String::is_empty) => v.push("out_args.export_file entries must be non-empty".to_string()),
        _ => {}
    }
    if cfg.general.backend.as_ref().is_none_or(OneOrMany::is_empty) {
        v.push("general_args.backend is required".to_string());
    }
    let t = &cfg.task_args;
    let require = |v: &mut Vec<String>, present: bool, what: &str| {
        if !present {
            v.push(format!("{} requires task_args.{what}", cfg.general.task));
        }
    };
    match kind {
        Some(TaskKind::Conversion) => {
            require(&mut v, t.model_name.is_some(), "model_name");
            require(&mut v, t.model_file.is_some(), "model_file");
            require(&mut v, t.onnx_version.is_some(), "onnx_version");
            if let (Some(b), Some(n), Some(f), Some(e)) = (&cfg.general.backend, &t.model_name, &t.model_file, &cfg.out.export_file) {
                let lens = [b.len(), n.len(), f.len(), e.len()];
                if lens.iter().any(|&l| l != lens[0]) {
                    v.push(format!(
                        "conversion sequences must have equal lengths: backend {}, model_name {}, model_file {}, export_file {}",
                        lens[0], lens[1], lens[2], lens[3]
                    ));
                }
            }
        }
        Some(TaskKind::Inference) => {
            require(&mut v, t.model_file.as_ref().is_some_and(|f| !f.is_empty()), "model_file");
            require(&mut v, t.input.is_some(), "input");
            if let (Some(n), Some(f)) = (&t.model_name, &t.model_file) {
                if n.len() != f.len() {
                    v.push(format!("model_name has {} entries but model_file has {}", n.len(), f.len()));
                }
            }
            if cfg.out.export_file.as_ref().is_some_and(|e| e.single().is_none()) {
                v.push("inference takes exactly one out_args.export_file".to_string());
            }
        }
        Some(TaskKind::Container) => {
            require(&mut v, t.work_dir.is_some(), "work_dir");
            require(&mut v, t.build_file.is_some(), "build_file");
            if cfg.out.export_file.as_ref().is_some_and(|e| e.single().is_none()) {
                v.push("container takes exactly one out_args.export_file".to_string());
            }
        }
        None => {}
    }
    if let Some(ir) = t.onnx_version {
        if ir < 1 {
            v.push("task_args.onnx_version must be ≥ 1".to_string());
        }
    }
    ValidationReport::from_violations(v)
}
