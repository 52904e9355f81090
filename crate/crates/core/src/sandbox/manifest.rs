use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SandboxError;

/// Declares how a project is built and run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxManifest {
    pub build_tag: String,
    /// Program and arguments, split on whitespace. No shell is involved.
    pub entrypoint: String,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub volume: String,
}

/// Accepts `a/b/c` forms only: relative, no empty, `.` or `..` segments.
pub fn check_relative_path(p: &str) -> Result<(), SandboxError> {
    if p.is_empty() {
        return Err(SandboxError::Invalid("empty path".into()));
    }
    if p.starts_with('/') || p.contains('\\') || p.contains('\0') {
        return Err(SandboxError::PathEscape(p.to_string()));
    }
    for seg in p.split('/') {
        match seg {
            ".." => return Err(SandboxError::PathEscape(p.to_string())),
            "" | "." => return Err(SandboxError::Invalid(format!("path {p:?} is not normalized"))),
            _ => {}
        }
    }
    Ok(())
}

impl SandboxManifest {
    pub fn check(&self) -> Result<(), SandboxError> {
        if self.build_tag.trim().is_empty() {
            return Err(SandboxError::Invalid("build_tag is empty".into()));
        }
        if self.entrypoint.split_whitespace().next().is_none() {
            return Err(SandboxError::Invalid("entrypoint is empty".into()));
        }
        if !self.volume.starts_with('/') {
            return Err(SandboxError::Invalid(format!("volume {:?} must be an absolute path", self.volume)));
        }
        for k in self.env.keys() {
            if k.is_empty() || k.contains('=') || k.contains('\0') {
                return Err(SandboxError::Invalid(format!("invalid environment variable name {k:?}")));
            }
        }
        for p in self.inputs.iter().chain(&self.outputs) {
            check_relative_path(p)?;
        }
        Ok(())
    }

    pub fn argv(&self) -> Vec<&str> {
        self.entrypoint.split_whitespace().collect()
    }

    /// Stable bytes: fixed field order, sorted env, compact JSON.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("manifest serializes")
    }
}

pub fn parse_manifest(bytes: &[u8]) -> Result<SandboxManifest, SandboxError> {
    let m: SandboxManifest = serde_json::from_slice(bytes).map_err(|e| SandboxError::Malformed(e.to_string()))?;
    m.check()?;
    Ok(m)
}
