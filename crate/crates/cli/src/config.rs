//! Run configuration: one JSON document plus `POLARON_` environment overrides.

use std::path::{Path, PathBuf};

use polaron::grid::Profile;
use polaron::identities::SuiteOptions;
use polaron::instance::Instance;
use polaron::scan::ScanOptions;
use polaron::spectral::SolverConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Prefix for environment overrides; `__` separates nested keys.
pub const ENV_PREFIX: &str = "POLARON_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dimension: usize,
    pub half_width: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    Reuse,
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub profile: Profile,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default = "default_nmax")]
    pub nmax: usize,
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
    /// Spectral parameter of the persisted bundle.
    #[serde(default)]
    pub epsilon: f64,
    /// Continuum-edge buffer; defaults to `max(h^2, 10 tol)`.
    #[serde(default)]
    pub buffer: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: SuiteOptions,
    #[serde(default)]
    pub scan: ScanOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache: CachePolicy,
}

fn default_nmax() -> usize {
    4
}

impl RunConfig {
    pub fn instance(&self) -> Instance {
        Instance {
            dimension: self.grid.dimension,
            half_width: self.grid.half_width,
            spacing: self.grid.spacing,
            profile: self.profile,
            coupling: self.coupling,
            xi: self.xi.clone(),
        }
    }

    pub fn buffer(&self) -> f64 {
        self.buffer.unwrap_or_else(|| self.solver.edge_buffer(self.grid.spacing))
    }

    /// Checks everything that can be checked without assembling operators.
    pub fn validate(&self) -> CliResult<()> {
        let inst = self.instance();
        let grid = inst.grid()?;
        inst.xi()?;
        inst.form(&grid)?;
        self.solver.validate()?;
        self.verify.validate()?;
        if self.nmax < 1 {
            return Err(CliError::Config("nmax must be >= 1".into()));
        }
        if self.scan.nmax < 2 {
            return Err(CliError::Config("scan.nmax must be >= 2".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if let Some(b) = self.buffer {
            if !(b > 0.0 && b < 1.0) {
                return Err(CliError::Config(format!("buffer {b} must lie in (0, 1)")));
            }
        }
        if self.scan.couplings.is_empty() || self.scan.couplings.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(CliError::Config("scan.couplings must be a non-empty list of couplings >= 0".into()));
        }
        Ok(())
    }

    /// Hash of the physics-relevant content; output location and cache policy are excluded.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.cache = CachePolicy::Reuse;
        polaron::sparse::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

/// Parses a config document and applies environment overrides.
pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> CliResult<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    if !value.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    apply_env(&mut value, env)?;
    let config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, env)
}

/// `POLARON_SOLVER__SEED=7` sets `solver.seed`. Values parse as JSON, falling back to strings.
pub fn apply_env(value: &mut Value, env: impl IntoIterator<Item = (String, String)>) -> CliResult<()> {
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("malformed override `{key}`")));
        }
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut node = &mut *value;
        for (i, seg) in path.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("override `{key}` descends into a non-object")))?;
            if i + 1 == path.len() {
                obj.insert(seg.clone(), parsed.clone());
                break;
            }
            let entry = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default()));
            if entry.is_null() {
                *entry = Value::Object(Default::default());
            }
            node = entry;
        }
    }
    Ok(())
}
