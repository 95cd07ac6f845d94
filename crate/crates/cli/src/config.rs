use std::path::{Path, PathBuf};

use fixpo_core::{EnvId, NetworkConfig, RolloutConfig, TrustRegionConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Version written to and required in every config file.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Fixpo,
    PpoClip,
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub trust_region: TrustRegionConfig,
    pub rollout: RolloutConfig,
    pub network: NetworkConfig,
    /// Minimum timesteps collected per improvement step (whole episodes).
    pub batch_timesteps: usize,
    pub improvement_steps: usize,
    /// Environment instances cycled through during a rollout.
    pub num_envs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// When false, `wall_ms` is written as 0 so metrics files are byte-identical
    /// across replays.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            algorithm: Algorithm::Fixpo,
            env: EnvId::PointMass2d,
            trust_region: TrustRegionConfig::default(),
            rollout: RolloutConfig::default(),
            network: NetworkConfig::default(),
            batch_timesteps: 2048,
            improvement_steps: 50,
            num_envs: 1,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            record_wall_time: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not match the schema: {0}")]
    Parse(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid config fields: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value`. The value is read as JSON when it parses, else
    /// as a bare string, so `env=chain_walk` and `trust_region.c_beta=1` both work.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let bad = |why: &str| ConfigError::Override(spec.to_string(), why.to_string());
        let (path, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        set_path(&mut tree, path, value).map_err(|e| bad(&e))?;
        *self = serde_json::from_value(tree).map_err(|e| bad(&e.to_string()))?;
        Ok(())
    }

    /// Offending fields as `path: reason`.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            bad.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.batch_timesteps == 0 {
            bad.push("batch_timesteps: must be at least 1".into());
        }
        if self.num_envs == 0 {
            bad.push("num_envs: must be at least 1".into());
        }
        for (name, v) in [("gamma", self.rollout.gamma), ("lambda", self.rollout.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("rollout.{name}: must lie in [0, 1], got {v}"));
            }
        }
        if self.network.hidden.contains(&0) {
            bad.push("network.hidden: widths must be positive".into());
        }
        bad.extend(self.trust_region.violations().into_iter().map(|v| format!("trust_region.{v}")));
        bad
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad))
        }
    }
}

/// Sets a dotted path inside a JSON object; every segment must already exist,
/// which catches typos before deserialization does.
pub(crate) fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut node = tree;
    let mut segments = path.split('.').peekable();
    while let Some(seg) = segments.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("`{seg}` is not inside an object"))?;
        let child = obj.get_mut(seg).ok_or_else(|| format!("unknown field `{seg}`"))?;
        if segments.peek().is_none() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err("empty key".into())
}
