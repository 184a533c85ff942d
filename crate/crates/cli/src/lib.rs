//! Commands behind the `gfn` binary.

pub mod config;
pub mod plotdata;
pub mod sweep;

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gflownet::metrics::write_metrics_csv;
use gflownet::trainer::{self, RunConfig, RunError, RunLog};

pub use config::{load, ConfigFile};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.resolved.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ERROR_FILE: &str = "error.txt";

#[derive(Debug)]
pub enum CliError {
    /// Bad config, unusable output directory or unreadable input.
    Config(String),
    /// A run diverged; partial output was written.
    NonFinite(String),
    /// One or more sweep cells failed.
    Partial(String),
    /// A run dir lacks metrics.csv.
    MissingMetrics(PathBuf),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::NonFinite(m) | CliError::Partial(m) | CliError::Io(m) => f.write_str(m),
            CliError::MissingMetrics(p) => write!(f, "missing metrics: {}", p.join(METRICS_FILE).display()),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NonFinite(_) | CliError::Partial(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Fails when `dir` holds anything and `force` is off.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_log(dir: &Path, log: &RunLog, with_checkpoint: bool) -> Result<(), CliError> {
    let file = BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    write_metrics_csv(&log.rows, file).map_err(|e| CliError::Io(e.to_string()))?;
    if with_checkpoint {
        write_json(&dir.join(CHECKPOINT_FILE), &log.checkpoint)?;
    }
    Ok(())
}

/// Trains one configuration into `dir`, which must already be prepared.
pub fn execute(cfg: &RunConfig, dir: &Path) -> Result<RunLog, CliError> {
    write_json(&dir.join(CONFIG_FILE), &cfg.resolved())?;
    match trainer::run(cfg) {
        Ok(log) => {
            write_log(dir, &log, true)?;
            Ok(log)
        }
        Err(RunError::NonFiniteLoss {
            agent,
            iteration,
            partial,
        }) => {
            write_log(dir, &partial, false)?;
            Err(CliError::NonFinite(format!(
                "non-finite {agent} loss at iteration {iteration}; partial metrics in {}",
                dir.display()
            )))
        }
        Err(RunError::Config(m)) => Err(CliError::Config(m)),
        Err(e) => Err(CliError::Config(e.to_string())),
    }
}

pub fn cmd_run(config: &Path, out: Option<&Path>, force: bool) -> Result<PathBuf, CliError> {
    let file = load(config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or(file.out_dir.clone())
        .unwrap_or_else(|| config::default_out_dir(&file.stem));
    prepare_out_dir(&dir, force)?;
    execute(&file.run, &dir)?;
    Ok(dir)
}
