use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

pub const PID_PREFIX: &str = "hpcf-";

/// `hpcf-` followed by the first 20 hex digits of the content's SHA-256.
pub fn derive_pid(content: &[u8]) -> String {
    pid_from_hash(&sha256_hex(content))
}

pub(crate) fn pid_from_hash(hash: &str) -> String {
    format!("{PID_PREFIX}{}", &hash[..20])
}

pub fn is_pid(s: &str) -> bool {
    s.strip_prefix(PID_PREFIX).is_some_and(|h| h.len() == 20 && h.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactType {
    Model,
    Dataset,
    ContainerManifest,
}

impl ArtifactType {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactType::Model => "model",
            ArtifactType::Dataset => "dataset",
            ArtifactType::ContainerManifest => "container-manifest",
        }
    }
}

impl fmt::Display for ArtifactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(ArtifactType::Model),
            "dataset" => Ok(ArtifactType::Dataset),
            "container-manifest" => Ok(ArtifactType::ContainerManifest),
            other => Err(format!("unknown artifact type {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvenanceOp {
    ConvertedFrom,
    ComposedFrom,
    DerivedFrom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEdge {
    pub parent_pid: String,
    pub operation: ProvenanceOp,
}

/// Descriptive metadata for one stored artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub pid: String,
    pub title: String,
    pub artifact_type: ArtifactType,
    pub backend_tag: String,
    pub version: u32,
    pub tags: BTreeSet<String>,
    pub creator: String,
    pub license: String,
    pub content_hash: String,
    pub size_bytes: u64,
    pub provenance: Vec<ProvenanceEdge>,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
}

/// Caller-supplied metadata for a registration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactDraft {
    pub title: String,
    pub artifact_type: ArtifactType,
    pub backend_tag: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub license: String,
    #[serde(default)]
    pub provenance: Vec<ProvenanceEdge>,
}

fn default_version() -> u32 {
    1
}

impl ArtifactDraft {
    pub fn new(title: impl Into<String>, artifact_type: ArtifactType, backend_tag: impl Into<String>) -> Self {
        ArtifactDraft {
            title: title.into(),
            artifact_type,
            backend_tag: backend_tag.into(),
            tags: Vec::new(),
            version: 1,
            license: String::new(),
            provenance: Vec::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }
}

/// Lowercases and trims, joins internal whitespace runs with `-`, and drops
/// empty tags. The set removes duplicates.
pub fn normalize_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    tags.into_iter()
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join("-").to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Conjunctive filter over records.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub artifact_type: Option<ArtifactType>,
    #[serde(default)]
    pub backend_tag: Option<String>,
    #[serde(default)]
    pub title_substring: Option<String>,
}

impl SearchQuery {
    pub fn tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        SearchQuery { tags: normalize_tags(tags), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty() && self.artifact_type.is_none() && self.backend_tag.is_none() && self.title_substring.is_none()
    }

    pub fn matches(&self, r: &ArtifactRecord) -> bool {
        self.tags.is_subset(&r.tags)
            && self.artifact_type.is_none_or(|t| t == r.artifact_type)
            && self.backend_tag.as_ref().is_none_or(|b| *b == r.backend_tag)
            && self.title_substring.as_ref().is_none_or(|s| r.title.to_lowercase().contains(&s.to_lowercase()))
    }
}

/// Newest first, then by pid.
pub fn search_order(a: &ArtifactRecord, b: &ArtifactRecord) -> std::cmp::Ordering {
    b.created_at.cmp(&a.created_at).then_with(|| a.pid.cmp(&b.pid))
}

pub(crate) fn timestamp_string(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// RFC 3339 UTC timestamps with whole seconds.
pub(crate) mod timestamp {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s).map(|t| t.with_timezone(&Utc)).map_err(serde::de::Error::custom)
    }
}
