//! Run directories: `manifest.json`, `matrices/`, `results/`, `tables/`.
//!
//! Every artifact is recorded in the manifest with its SHA-256, and the manifest
//! carries a hash of itself. Any mismatch on read is fatal.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use polaron::sparse::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    /// Relative path to artifact record.
    pub artifacts: BTreeMap<String, Artifact>,
    /// SHA-256 of this document serialized with an empty `manifest_hash`.
    pub manifest_hash: String,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        let config_hash = config.content_hash();
        Self {
            format_version: FORMAT_VERSION,
            config,
            config_hash,
            artifacts: BTreeMap::new(),
            manifest_hash: String::new(),
        }
    }

    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.manifest_hash.clear();
        sha256_hex(&serde_json::to_vec_pretty(&copy).expect("manifest serializes"))
    }
}

pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Opens an existing run and verifies the manifest and every artifact hash.
    pub fn open(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Err(CliError::Config(format!("no run at {} (missing {MANIFEST})", root.display())));
        }
        let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
        let manifest: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| CliError::Cache(format!("{} is unreadable: {e}", path.display())))?;
        if manifest.compute_hash() != manifest.manifest_hash {
            return Err(CliError::Cache(format!("{} self-hash mismatch", path.display())));
        }
        let run = Self {
            root: root.to_path_buf(),
            manifest,
        };
        for rel in run.manifest.artifacts.keys() {
            run.read_artifact(rel)?;
        }
        Ok(run)
    }

    /// Creates (or resets) a run directory for `config`.
    pub fn create(root: &Path, config: RunConfig) -> CliResult<Self> {
        for sub in ["matrices", "results", "tables"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        let mut run = Self {
            root: root.to_path_buf(),
            manifest: RunManifest::new(config),
        };
        run.save()?;
        Ok(run)
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    pub fn save(&mut self) -> CliResult<()> {
        self.manifest.manifest_hash = self.manifest.compute_hash();
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| io(&path, e))
    }

    /// Writes an artifact and records its hash; call [`RunDir::save`] afterwards.
    pub fn write_artifact(&mut self, rel: &str, bytes: &[u8]) -> CliResult<String> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        let sha = sha256_hex(bytes);
        self.manifest.artifacts.insert(
            rel.to_string(),
            Artifact {
                sha256: sha.clone(),
                bytes: bytes.len() as u64,
            },
        );
        Ok(sha)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<String> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("result serializes");
        bytes.push(b'\n');
        self.write_artifact(rel, &bytes)
    }

    pub fn has(&self, rel: &str) -> bool {
        self.manifest.artifacts.contains_key(rel)
    }

    /// Reads a recorded artifact, failing on any hash mismatch.
    pub fn read_artifact(&self, rel: &str) -> CliResult<Vec<u8>> {
        let record = self
            .manifest
            .artifacts
            .get(rel)
            .ok_or_else(|| CliError::Config(format!("artifact {rel} not present in this run")))?;
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::Cache(format!("{}: {e}", path.display())))?;
        let sha = sha256_hex(&bytes);
        if sha != record.sha256 {
            return Err(CliError::Cache(format!("{rel}: hash {sha} does not match manifest {}", record.sha256)));
        }
        Ok(bytes)
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> CliResult<T> {
        let bytes = self.read_artifact(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Cache(format!("{rel}: {e}")))
    }

    pub fn drop_artifacts(&mut self) {
        self.manifest.artifacts.clear();
    }
}
