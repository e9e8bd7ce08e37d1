//! Flag/config merging and config embedding.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<treeprune::Error> for CliError {
    fn from(e: treeprune::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Pulls a config object out of a plain JSON file or any file this tool wrote:
/// a `# config: {...}` CSV line, a JSONL `{"config": ...}` first record, or a
/// JSON document with a `config` field.
pub fn read_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
    let bad = |e: String| CliError::Validation(format!("config {}: {e}", path.display()));
    let first = text.lines().next().unwrap_or("");
    let value: Value = if let Some(rest) = first.strip_prefix("# config: ") {
        serde_json::from_str(rest).map_err(|e| bad(e.to_string()))?
    } else {
        let whole = serde_json::from_str::<Value>(&text).or_else(|_| serde_json::from_str::<Value>(first));
        let v = whole.map_err(|e| bad(e.to_string()))?;
        match v.get("config") {
            Some(c) => c.clone(),
            None => v,
        }
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(bad("expected a JSON object".into())),
    }
}

/// Overlays `config` on the flag values; keys present in the config win.
pub fn merge<T: Serialize + DeserializeOwned>(command: &str, flags: T, config: Option<Map<String, Value>>) -> CliResult<T> {
    let Some(mut config) = config else { return Ok(flags) };
    if let Some(c) = config.remove("command") {
        if c != Value::String(command.into()) {
            return usage(format!("config is for command {c}, not {command}"));
        }
    }
    let mut value = serde_json::to_value(&flags).expect("flags serialize");
    let obj = value.as_object_mut().expect("flags are an object");
    for (k, v) in config {
        if !obj.contains_key(&k) {
            return usage(format!("unknown config key '{k}' for {command}"));
        }
        obj.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
}

/// The resolved config as a JSON object tagged with the command name.
pub fn embed<T: Serialize>(command: &str, resolved: &T) -> Value {
    let mut v = serde_json::to_value(resolved).expect("config serializes");
    if let Value::Object(m) = &mut v {
        let mut out = Map::new();
        out.insert("command".into(), Value::String(command.into()));
        out.extend(std::mem::take(m));
        return Value::Object(out);
    }
    v
}

pub fn csv_header_line(config: &Value) -> String {
    format!("# config: {config}\n")
}

pub fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

/// Comma-separated numbers, e.g. `0.1,0.5,1`.
pub fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| CliError::Usage(format!("bad {what} entry '{p}'"))))
        .collect()
}
