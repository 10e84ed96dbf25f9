//! Run configuration: a [`TrainConfig`] plus the paths a command needs.
//!
//! Resolution order is flag, then environment (output directory only), then
//! file, then built-in default. The resolved form is written next to every
//! command's outputs and parses back to the same value.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use weakshot_core::TrainConfig;

pub const OUT_DIR_ENV: &str = "WEAKSHOT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "weakshot-out";

/// Bad input from the command line or a config file; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Dataset directory in the four-file graph format.
    pub data: PathBuf,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

/// Command-line overrides shared by every config-driven command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// `key=value` pairs; values parse as JSON, falling back to a string.
    pub set: Vec<String>,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides`, and validates the result.
    /// A relative `data` path in a file is taken relative to that file.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                let mut map = match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(usage(format!("{}: expected a JSON object", p.display()))),
                    Err(e) => return Err(usage(format!("{}: {e}", p.display()))),
                };
                if let Some(Value::String(d)) = map.get("data") {
                    let base = p.parent().unwrap_or(Path::new(""));
                    map.insert("data".into(), Value::String(base.join(d).to_string_lossy().into_owned()));
                }
                map
            }
            None => Map::new(),
        };
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            map.insert("out_dir".into(), Value::String(dir));
        }
        for kv in &overrides.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            map.insert(k.trim().to_string(), value);
        }
        if let Some(d) = &overrides.data {
            map.insert("data".into(), Value::String(d.to_string_lossy().into_owned()));
        }
        if let Some(d) = &overrides.out_dir {
            map.insert("out_dir".into(), Value::String(d.to_string_lossy().into_owned()));
        }
        Self::from_map(map)
    }

    pub fn from_map(mut map: Map<String, Value>) -> anyhow::Result<Self> {
        let data = match map.remove("data") {
            Some(Value::String(s)) => PathBuf::from(s),
            Some(other) => return Err(usage(format!("field `data` must be a path string, got {other}"))),
            None => return Err(usage("missing field `data`")),
        };
        let out_dir = match map.remove("out_dir") {
            Some(Value::String(s)) => PathBuf::from(s),
            Some(other) => return Err(usage(format!("field `out_dir` must be a path string, got {other}"))),
            None => PathBuf::from(DEFAULT_OUT_DIR),
        };
        let train: TrainConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("config: {e}")))?;
        train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(Self { data, out_dir, train })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the resolved configuration as `config.json` in `dir`.
    pub fn write_beside(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), self.to_json())?;
        Ok(())
    }
}
