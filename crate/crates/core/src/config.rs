//! Run configuration: model, training and data settings in one TOML or
//! JSON file, with `key.path=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::DatasetSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// When set, replaces the model, training and dataset seeds.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Scene generation for `synth-data`.
    pub dataset: DatasetSpec,
    /// Training manifest, relative paths resolved against the config file.
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
}


fn parse_text(text: &str, json: bool) -> Result<Value> {
    if json {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))
    } else {
        let t: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML config: {}", e.message())))?;
        serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses an override value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot-separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed override key {path:?}")));
    }
    for key in &keys[..keys.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-table")))?;
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-table")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses config text; `json` selects the format.
    pub fn from_text(text: &str, json: bool, overrides: &[String]) -> Result<Self> {
        let mut value = parse_text(text, json)?;
        if value.is_null() {
            value = Value::Object(Default::default());
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut value, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.resolved()
    }

    /// Loads a `.json` or TOML file, resolving manifest paths against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::from_text(&text, json, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train_manifest, &mut cfg.test_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies the shared seed and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.dataset.seed = s;
        }
        self.model.validate()?;
        self.train.validate(&self.model)?;
        self.dataset.sampler.validate()?;
        if self.dataset.sampler.n != self.model.n {
            return Err(Error::Config(format!("dataset N={} differs from model N={}", self.dataset.sampler.n, self.model.n)));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
