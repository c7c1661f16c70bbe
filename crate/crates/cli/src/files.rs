//! Reading and writing artifacts with error classification.

use std::path::{Path, PathBuf};

use duplex_core::config::{EngineConfig, CONFIG_ENV};
use duplex_core::policy::PolicyModel;
use duplex_core::sim::{Scenario, Suite};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_suites(paths: &[PathBuf]) -> CliResult<Vec<Suite>> {
    paths
        .iter()
        .map(|p| Suite::from_json(&read(p)?).map_err(|e| CliError::data(p, e)))
        .collect()
}

pub fn scenarios(suites: &[Suite]) -> Vec<Scenario> {
    suites
        .iter()
        .flat_map(|s| s.scenarios.iter().cloned())
        .collect()
}

pub fn load_model(path: &Path) -> CliResult<PolicyModel> {
    PolicyModel::from_json(&read(path)?).map_err(|e| CliError::data(path, e))
}

/// Sets `a.b.c` in a JSON object, creating intermediate objects.
fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            CliError::Config(format!(
                "`{key}`: `{}` is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Config(format!("empty override key `{key}`")))
}

/// Resolves the config: file (flag, then environment variable) or
/// defaults, then `key=value` overrides, where values are JSON or bare
/// strings.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<EngineConfig> {
    let from_env = std::env::var_os(CONFIG_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let path = path.map(Path::to_path_buf).or(from_env);
    let mut value = match &path {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => serde_json::to_value(EngineConfig::default()).expect("config serializes"),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut value, k.trim(), v)?;
    }
    let where_ = path.map_or("config".to_string(), |p| p.display().to_string());
    let text = value.to_string();
    EngineConfig::from_json(&text).map_err(|e| CliError::Config(format!("{where_}: {e}")))
}
