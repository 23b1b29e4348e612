//! Run configuration: defaults, a JSON file of flat dotted keys, then
//! command-line overrides. The merged result is snapshotted into the run
//! directory in the same flat form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tsd_core::dataset::ToyDatasetConfig;
use tsd_core::models::{ConditionalConfig, StudentConfig};
use tsd_core::training::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the manifests; manifest paths are relative to it.
    pub dir: PathBuf,
    pub source_manifest: String,
    pub target_manifest: String,
    pub target_strong_manifest: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            source_manifest: "source.jsonl".into(),
            target_manifest: "target.jsonl".into(),
            target_strong_manifest: "target_strong.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub dataset: ToyDatasetConfig,
    pub student: StudentConfig,
    pub conditional: ConditionalConfig,
    pub conditional_epochs: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            dataset: ToyDatasetConfig::default(),
            student: StudentConfig::desk(),
            conditional: ConditionalConfig::desk(),
            conditional_epochs: 30,
            train: TrainConfig::default(),
        }
    }
}

pub type Flat = BTreeMap<String, Value>;

/// Dotted-key view of a JSON object. Arrays and scalars are leaves.
pub fn flatten(v: &Value) -> Flat {
    fn walk(prefix: &str, v: &Value, out: &mut Flat) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, x) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, x, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = Flat::new();
    walk("", v, &mut out);
    out
}

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(CliError::Config(format!("unknown config key {key}")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?;
    }
    Ok(())
}

/// Text after `=` is read as JSON when it parses, as a string otherwise.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn read_flat(path: &Path) -> CliResult<Flat> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match v {
        Value::Object(m) => Ok(flatten(&Value::Object(m))),
        _ => Err(CliError::Config(format!(
            "{}: expected a JSON object",
            path.display()
        ))),
    }
}

/// Apply layers of dotted keys, later layers winning, on top of `base`.
pub fn merge(base: &RunConfig, layers: &[Flat]) -> CliResult<RunConfig> {
    let mut root = serde_json::to_value(base).expect("config serializes");
    for layer in layers {
        for (k, v) in layer {
            set_path(&mut root, k, v.clone())?;
        }
    }
    let cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.student
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn to_flat_json(cfg: &RunConfig) -> String {
    let flat = flatten(&serde_json::to_value(cfg).expect("config serializes"));
    let obj: Map<String, Value> = flat.into_iter().collect();
    serde_json::to_string_pretty(&Value::Object(obj)).expect("json") + "\n"
}
