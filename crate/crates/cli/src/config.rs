//! Config files: a `RunConfig` document plus `out_dir` and an optional `sweep` block.

use std::path::{Path, PathBuf};

use gflownet::trainer::RunConfig;
use serde_json::{Map, Value};

use crate::CliError;

/// Env var naming the root under which runs without an explicit output directory land.
pub const OUT_ROOT_VAR: &str = "GFN_OUT_DIR";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// Dotted field paths and the values each takes, in file order.
    pub axes: Vec<(String, Vec<Value>)>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    /// The run document with `out_dir` and `sweep` removed.
    pub document: Value,
    pub run: RunConfig,
    pub out_dir: Option<PathBuf>,
    pub sweep: Option<SweepSpec>,
    pub stem: String,
}

/// Short axis names accepted alongside dotted paths.
pub fn axis_path(name: &str) -> &str {
    match name {
        "method" => "explorer.kind",
        "lambda" => "explorer.lambda",
        "size" => "env.height",
        other => other,
    }
}

pub fn parse_run_config(doc: &Value) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        CliError::Config(describe(&path, &inner))
    })?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn describe(path: &str, msg: &str) -> String {
    let prefix = if path == "." { String::new() } else { format!("{path}.") };
    if let Some(rest) = msg.strip_prefix("missing field `") {
        let field = rest.split('`').next().unwrap_or(rest);
        return format!("missing field: {prefix}{field}");
    }
    if path == "." {
        msg.to_string()
    } else {
        format!("{path}: {msg}")
    }
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut document: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let obj = document
        .as_object_mut()
        .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
    let out_dir = match obj.remove("out_dir") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(CliError::Config("out_dir: expected a string".into())),
    };
    let sweep = obj.remove("sweep").map(parse_sweep).transpose()?;
    let run = parse_run_config(&document)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Ok(ConfigFile {
        document,
        run,
        out_dir,
        sweep,
        stem,
    })
}

fn parse_sweep(v: Value) -> Result<SweepSpec, CliError> {
    let mut obj = match v {
        Value::Object(o) => o,
        _ => return Err(CliError::Config("sweep: expected an object".into())),
    };
    let axes = match obj.remove("axes") {
        Some(Value::Object(a)) => a,
        Some(_) => return Err(CliError::Config("sweep.axes: expected an object".into())),
        None => Map::new(),
    };
    let seeds = match obj.remove("seeds") {
        Some(Value::Array(s)) => s
            .iter()
            .map(|x| x.as_u64().ok_or_else(|| CliError::Config("sweep.seeds: expected integers".into())))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(CliError::Config("sweep.seeds: expected a list".into())),
        None => Vec::new(),
    };
    if let Some(k) = obj.keys().next() {
        return Err(CliError::Config(format!("sweep: unknown field `{k}`")));
    }
    let mut out = Vec::new();
    for (name, values) in axes {
        match values {
            Value::Array(vals) if !vals.is_empty() => {
                if vals.iter().any(|v| v.is_object() || v.is_array()) {
                    return Err(CliError::Config(format!("sweep.axes.{name}: values must be scalars")));
                }
                out.push((name, vals))
            }
            _ => return Err(CliError::Config(format!("sweep.axes.{name}: expected a non-empty list"))),
        }
    }
    Ok(SweepSpec { axes: out, seeds })
}

/// Sets a dotted field path, creating intermediate objects.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("sweep axis {path}: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

pub fn default_out_dir(stem: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(stem)
}
