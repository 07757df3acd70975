//! Effective settings: built-in defaults, overlaid by the `--config` file,
//! overlaid by flags given on the command line.

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

/// A problem with how the program was invoked. Exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Top-level object of a JSON config file; empty when no file was given.
pub fn read_config_file(path: Option<&Path>) -> anyhow::Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(usage(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(usage(format!("{}: {e}", path.display()))),
    }
}

/// Deserializes `T` from its defaults with `file` and then `flags` laid over them.
///
/// Keys that `T` does not know are ignored, so one config file can serve every
/// subcommand.
pub fn resolve<T>(file: &Map<String, Value>, flags: &impl Serialize) -> anyhow::Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("settings serialize to objects"),
    };
    for (k, v) in file {
        merged.insert(k.clone(), v.clone());
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| usage(format!("invalid setting: {e}")))
}

/// Global settings shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Globals {
    pub fn resolve(
        file: &Map<String, Value>,
        seed: Option<u64>,
        jobs: Option<usize>,
        out: Option<PathBuf>,
    ) -> anyhow::Result<Self> {
        fn pick<T: DeserializeOwned>(
            flag: Option<T>,
            file: &Map<String, Value>,
            key: &str,
            default: T,
        ) -> anyhow::Result<T> {
            if let Some(v) = flag {
                return Ok(v);
            }
            match file.get(key) {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| usage(format!("invalid setting {key}: {e}"))),
                None => Ok(default),
            }
        }
        Ok(Self {
            seed: pick(seed, file, "seed", 0)?,
            jobs: pick(jobs, file, "jobs", 0)?,
            out: pick(out, file, "out", PathBuf::from("out"))?,
        })
    }
}

/// Writes `config.json` into the output directory: the globals, the command
/// name and every resolved setting, plus any `extra` derived values.
pub fn echo(
    globals: &Globals,
    command: &str,
    settings: &impl Serialize,
    extra: Map<String, Value>,
) -> anyhow::Result<()> {
    let mut map = Map::new();
    map.insert("command".into(), Value::from(command));
    if let Value::Object(g) = serde_json::to_value(globals)? {
        map.extend(g);
    }
    if let Value::Object(s) = serde_json::to_value(settings)? {
        map.extend(s);
    }
    map.extend(extra);
    let path = globals.out.join("config.json");
    let text = serde_json::to_string_pretty(&Value::Object(map))? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
