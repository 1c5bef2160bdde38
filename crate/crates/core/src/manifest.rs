//! Run manifests: enough provenance to rerun a classification and get the same output.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::HypothesisSet;

/// SHA-256 hex digest of a value's JSON serialization.
///
/// Struct fields serialize in declaration order and sequences keep their order,
/// so the digest changes when hypotheses are reordered.
pub fn content_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn hypothesis_set_hash(hset: &HypothesisSet) -> String {
    content_digest(hset)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub backend_id: String,
    pub model_id: String,
    /// Digest of the hypothesis sets (and dimensions) driving the run.
    pub content_hash: String,
    pub parameters: BTreeMap<String, String>,
    pub notes: Option<String>,
    pub codebook: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub backend_id: String,
    pub model_id: String,
    pub hypothesis_set_hash: String,
    pub parameters: BTreeMap<String, String>,
    pub timestamp: DateTime<Utc>,
    /// Free-form description of the information context the run assumes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<String>,
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    backend_id: &'a str,
    model_id: &'a str,
    content_hash: &'a str,
    parameters: &'a BTreeMap<String, String>,
}

impl RunManifest {
    /// The run id is derived from content only, never from the timestamp.
    pub fn new(config: RunConfig, timestamp: DateTime<Utc>) -> Self {
        let identity = RunIdentity {
            backend_id: &config.backend_id,
            model_id: &config.model_id,
            content_hash: &config.content_hash,
            parameters: &config.parameters,
        };
        let run_id = content_digest(&identity)[..16].to_string();
        RunManifest {
            run_id,
            backend_id: config.backend_id,
            model_id: config.model_id,
            hypothesis_set_hash: config.content_hash,
            parameters: config.parameters,
            timestamp,
            notes: config.notes,
            codebook: config.codebook,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot write manifest {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read manifest {path}: {message}")]
    Read { path: String, message: String },
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), ManifestError> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    let wrap = |source| ManifestError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    std::fs::write(path, body + "\n").map_err(wrap)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ManifestError> {
    let wrap = |message: String| ManifestError::Read {
        path: path.display().to_string(),
        message,
    };
    let body = std::fs::read_to_string(path).map_err(|e| wrap(e.to_string()))?;
    serde_json::from_str(&body).map_err(|e| wrap(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Hypothesis, LabelSet};

    fn set(texts: [&str; 3]) -> HypothesisSet {
        let ls = LabelSet::new("stance", ["support", "oppose", "neutral"]).unwrap();
        HypothesisSet::new(
            "trump",
            ls,
            vec![
                Hypothesis::new("s", "support", texts[0]),
                Hypothesis::new("o", "oppose", texts[1]),
                Hypothesis::new("n", "neutral", texts[2]),
            ],
        )
        .unwrap()
    }

    const TEXTS: [&str; 3] = [
        "The author of this tweet supports Trump.",
        "The author of this tweet opposes Trump.",
        "The author of this tweet is neutral about Trump.",
    ];

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(hypothesis_set_hash(&set(TEXTS)), hypothesis_set_hash(&set(TEXTS)));
    }

    #[test]
    fn one_character_edit_changes_hash() {
        let mut edited = TEXTS;
        edited[1] = "The author of this tweet opposes Trump!";
        assert_ne!(hypothesis_set_hash(&set(TEXTS)), hypothesis_set_hash(&set(edited)));
    }

    #[test]
    fn hypothesis_order_changes_hash() {
        let a = set(TEXTS);
        let mut b = a.clone();
        b.hypotheses.swap(0, 2);
        assert_ne!(hypothesis_set_hash(&a), hypothesis_set_hash(&b));
    }

    #[test]
    fn timestamp_does_not_affect_run_id() {
        let config = RunConfig {
            backend_id: "mock".into(),
            model_id: "m".into(),
            content_hash: hypothesis_set_hash(&set(TEXTS)),
            ..Default::default()
        };
        let a = RunManifest::new(config.clone(), Utc::now());
        let b = RunManifest::new(config, DateTime::<Utc>::UNIX_EPOCH);
        assert_eq!(a.run_id, b.run_id);
        assert_eq!(a.hypothesis_set_hash, b.hypothesis_set_hash);
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut parameters = BTreeMap::new();
        parameters.insert("seed".to_string(), "7".to_string());
        let manifest = RunManifest::new(
            RunConfig {
                backend_id: "nli".into(),
                model_id: "deberta".into(),
                content_hash: "abc".into(),
                parameters,
                notes: Some("target mentioned in every tweet".into()),
                codebook: None,
            },
            Utc::now(),
        );
        let path = dir.path().join("run/manifest.json");
        write_manifest(&path, &manifest).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), manifest);
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, "x").unwrap();
        let manifest = RunManifest::new(RunConfig::default(), Utc::now());
        assert!(write_manifest(&file.join("manifest.json"), &manifest).is_err());
    }
}
