//! Long-format metric export for external plotting.

use std::fs;
use std::io::Write;
use std::path::Path;

use gflownet::metrics::read_metrics_csv;
use gflownet::trainer::RunConfig;

use crate::{CliError, CONFIG_FILE, METRICS_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    Trajectories,
    Iterations,
}

pub const HEADER: [&str; 6] = ["method", "seed", "x", "metric", "value", "run"];

/// Writes one row per run, evaluation point and metric. Dirs without metrics are
/// reported on stderr and skipped; the first such dir is returned as the error.
pub fn cmd_plotdata<W: Write>(dirs: &[&Path], x: XAxis, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(|e| CliError::Io(e.to_string()))?;
    let mut missing = None;
    for dir in dirs {
        let Ok(f) = fs::File::open(dir.join(METRICS_FILE)) else {
            let e = CliError::MissingMetrics(dir.to_path_buf());
            eprintln!("{e}");
            missing.get_or_insert(e);
            continue;
        };
        let rows = read_metrics_csv(f).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let cfg: Option<RunConfig> = fs::read_to_string(dir.join(CONFIG_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let method = cfg
            .as_ref()
            .map(|c| c.explorer.kind.name().to_string())
            .unwrap_or_default();
        let seed = cfg.as_ref().map(|c| c.seed.to_string()).unwrap_or_default();
        let run = dir.display().to_string();
        for r in &rows {
            let xv = match x {
                XAxis::Trajectories => r.trajectories_consumed,
                XAxis::Iterations => r.iteration,
            };
            for (name, value) in r.metric_values() {
                w.write_record([
                    method.as_str(),
                    seed.as_str(),
                    &xv.to_string(),
                    name,
                    &format!("{value:?}"),
                    run.as_str(),
                ])
                .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    match missing {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
