//! Model artifacts: a JSON envelope around a serialized pipeline.
//!
//! The checksum is the SHA-256 of the saved file with the checksum's own 64
//! hex digits replaced by zeros, so every other byte of the file is covered.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use sentinel_core::anomaly::AnomalyPipeline;
use sentinel_core::classify::ClassifierPipeline;
use sentinel_core::nmf::NmfModel;

use crate::error::{IngestError, Result};

pub const ARTIFACT_SCHEMA_VERSION: &str = "sentinel-model/1";
/// Feature schema id recorded for NMF models, which consume whole spectra.
pub const NMF_FEATURE_SCHEMA: &str = "spectrum-grid/1";

const CHECKSUM_KEY: &str = "\"checksum_sha256\":\"";
const CHECKSUM_HEX_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Nmf,
    Anomaly,
    Classify,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Nmf => "nmf",
            PipelineKind::Anomaly => "anomaly",
            PipelineKind::Classify => "classify",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nmf" => Ok(PipelineKind::Nmf),
            "anomaly" => Ok(PipelineKind::Anomaly),
            "classify" => Ok(PipelineKind::Classify),
            other => Err(format!("unknown pipeline kind `{other}` (expected nmf, anomaly or classify)")),
        }
    }
}

// Field order is the on-disk order; the checksum must precede the body so
// the first match of CHECKSUM_KEY is the envelope's own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: String,
    pub kind: PipelineKind,
    pub created: DateTime<Utc>,
    pub feature_schema: String,
    pub checksum_sha256: String,
    pub body: Box<RawValue>,
}

impl ModelArtifact {
    pub fn new<T: Serialize>(
        kind: PipelineKind,
        feature_schema: impl Into<String>,
        body: &T,
        created: DateTime<Utc>,
    ) -> Result<Self> {
        let body = serde_json::value::to_raw_value(body).map_err(|e| IngestError::Parse(e.to_string()))?;
        let mut artifact = ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION.to_string(),
            kind,
            created,
            feature_schema: feature_schema.into(),
            checksum_sha256: "0".repeat(CHECKSUM_HEX_LEN),
            body,
        };
        artifact.checksum_sha256 = checksum_of(&artifact.encode())?;
        Ok(artifact)
    }

    fn encode(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(self).expect("artifacts always serialize");
        bytes.push(b'\n');
        bytes
    }

    /// File contents as written by [`save_model`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode()
    }

    pub fn body_json(&self) -> &str {
        self.body.get()
    }

    /// Decodes the body, refusing artifacts of another pipeline kind.
    pub fn body_as<T: DeserializeOwned>(&self, expected: PipelineKind) -> Result<T> {
        if self.kind != expected {
            return Err(IngestError::WrongKind { expected: expected.to_string(), found: self.kind.to_string() });
        }
        serde_json::from_str(self.body.get()).map_err(|e| IngestError::Parse(format!("artifact body: {e}")))
    }
}

/// SHA-256 of `bytes` with the checksum digits zeroed.
fn checksum_of(bytes: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Parse(format!("artifact is not UTF-8: {e}")))?;
    let start = text
        .find(CHECKSUM_KEY)
        .map(|i| i + CHECKSUM_KEY.len())
        .filter(|s| s + CHECKSUM_HEX_LEN <= bytes.len())
        .ok_or_else(|| IngestError::Parse("artifact has no checksum_sha256 field".into()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes[..start]);
    hasher.update([b'0'; CHECKSUM_HEX_LEN]);
    hasher.update(&bytes[start + CHECKSUM_HEX_LEN..]);
    Ok(hex::encode(hasher.finalize()))
}

/// Parses and verifies an artifact. The schema version is checked before
/// the checksum so a newer file reports a migration error.
pub fn parse_artifact(bytes: &[u8]) -> Result<ModelArtifact> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: String,
    }
    let version: Version =
        serde_json::from_slice(bytes).map_err(|e| IngestError::Parse(format!("artifact envelope: {e}")))?;
    if version.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(IngestError::Migration {
            found: version.schema_version,
            supported: ARTIFACT_SCHEMA_VERSION.to_string(),
        });
    }
    let artifact: ModelArtifact =
        serde_json::from_slice(bytes).map_err(|e| IngestError::Parse(format!("artifact envelope: {e}")))?;
    let computed = checksum_of(bytes)?;
    if computed != artifact.checksum_sha256 {
        return Err(IngestError::Checksum { recorded: artifact.checksum_sha256, computed });
    }
    Ok(artifact)
}

/// Writes via a temporary sibling file and a rename.
pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, artifact.to_bytes()).map_err(|e| IngestError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    parse_artifact(&bytes)
}

/// Any fitted pipeline that can live in an artifact.
#[derive(Debug, Clone, PartialEq)]
pub enum Pipeline {
    Nmf(NmfModel),
    Anomaly(AnomalyPipeline),
    Classify(ClassifierPipeline),
}

impl Pipeline {
    pub fn kind(&self) -> PipelineKind {
        match self {
            Pipeline::Nmf(_) => PipelineKind::Nmf,
            Pipeline::Anomaly(_) => PipelineKind::Anomaly,
            Pipeline::Classify(_) => PipelineKind::Classify,
        }
    }

    pub fn feature_schema(&self) -> &str {
        match self {
            Pipeline::Nmf(_) => NMF_FEATURE_SCHEMA,
            Pipeline::Anomaly(p) => &p.feature_schema,
            Pipeline::Classify(p) => &p.feature_schema,
        }
    }

    pub fn to_artifact(&self, created: DateTime<Utc>) -> Result<ModelArtifact> {
        let schema = self.feature_schema().to_string();
        match self {
            Pipeline::Nmf(m) => ModelArtifact::new(self.kind(), schema, m, created),
            Pipeline::Anomaly(p) => ModelArtifact::new(self.kind(), schema, p, created),
            Pipeline::Classify(p) => ModelArtifact::new(self.kind(), schema, p, created),
        }
    }

    pub fn from_artifact(artifact: &ModelArtifact) -> Result<Self> {
        let kind = artifact.kind;
        let p = match kind {
            PipelineKind::Nmf => Pipeline::Nmf(artifact.body_as(kind)?),
            PipelineKind::Anomaly => Pipeline::Anomaly(artifact.body_as(kind)?),
            PipelineKind::Classify => Pipeline::Classify(artifact.body_as(kind)?),
        };
        if p.feature_schema() != artifact.feature_schema {
            return Err(IngestError::Parse(format!(
                "envelope feature schema `{}` disagrees with the body's `{}`",
                artifact.feature_schema,
                p.feature_schema()
            )));
        }
        Ok(p)
    }
}
