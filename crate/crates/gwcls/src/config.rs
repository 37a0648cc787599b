//! Flat key-value configuration files.
//!
//! Format: one `key = value` per line, `#` starts a comment, blank lines
//! are ignored. Laws are comma-separated `x1 x2 prob` atom triples; lists
//! are comma-separated. Example:
//!
//! ```text
//! model = general
//! alpha = 0.3
//! n_values = 200, 2000
//! replicas = 5000
//! seed = 42
//! output = out/model_a
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::harness::ExperimentConfig;
use crate::model::{parse_law, LawParseError, ModelChoice};

const ALLOWED_KEYS: &[&str] = &[
    "model",
    "alpha",
    "offspring1",
    "offspring2",
    "immigration",
    "n",
    "n_values",
    "replicas",
    "limit_paths",
    "sde_steps",
    "seed",
    "output",
    "ks_tolerance",
    "var_ratio_tolerance",
    "steps",
    "paths",
    "target",
    "order",
    "ks_points",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected 'key = value', got '{1}'")]
    Malformed(usize, String),
    #[error("line {0}: unknown key '{1}'")]
    UnknownKey(usize, String),
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    #[error("key '{0}': cannot parse value '{1}'")]
    BadValue(String, String),
    #[error("missing required key '{0}' (not in config or flags)")]
    MissingKey(String),
    #[error(transparent)]
    Law(#[from] LawParseError),
}

/// Parsed key-value pairs of one config file.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed(idx + 1, raw.to_string()))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !ALLOWED_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(idx + 1, key));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Parses a single value, absent if the key is missing.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::BadValue(key.into(), raw.into())),
        }
    }

    /// Parses a comma-separated list, absent if the key is missing.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse()
                        .map_err(|_| ConfigError::BadValue(key.into(), item.into()))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

/// Resolves the model from config plus optional flag overrides; flags win.
pub fn model_choice(
    map: &ConfigMap,
    name_flag: Option<&str>,
    alpha_flag: Option<f64>,
) -> Result<ModelChoice, ConfigError> {
    let name = match name_flag.or_else(|| map.get("model")) {
        Some(name) => name.to_string(),
        None => return Err(ConfigError::MissingKey("model".into())),
    };
    let alpha = match alpha_flag {
        Some(a) => Some(a),
        None => map.value::<f64>("alpha")?,
    };
    let laws = if name == "custom" {
        let law = |key: &str| -> Result<_, ConfigError> {
            let text = map
                .get(key)
                .ok_or_else(|| ConfigError::MissingKey(key.into()))?;
            Ok(parse_law(text)?)
        };
        Some((law("offspring1")?, law("offspring2")?, law("immigration")?))
    } else {
        None
    };
    Ok(ModelChoice::resolve(&name, alpha, laws)?)
}

/// Builds an experiment config from a config map, with desk-scale defaults
/// for everything except the model.
pub fn experiment_config(map: &ConfigMap, model: ModelChoice) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::new(model);
    if let Some(n_values) = map.list::<usize>("n_values")? {
        config.n_values = n_values;
    }
    if let Some(replicas) = map.value("replicas")? {
        config.replicas = replicas;
    }
    if let Some(paths) = map.value("limit_paths")? {
        config.limit_paths = paths;
    }
    if let Some(steps) = map.value("sde_steps")? {
        config.sde_steps = steps;
    }
    if let Some(seed) = map.value("seed")? {
        config.seed = seed;
    }
    if let Some(output) = map.get("output") {
        config.output_path = Some(PathBuf::from(output));
    }
    if let Some(tol) = map.value("ks_tolerance")? {
        config.ks_tolerance = tol;
    }
    if let Some(tol) = map.value("var_ratio_tolerance")? {
        config.var_ratio_tolerance = tol;
    }
    Ok(config)
}
