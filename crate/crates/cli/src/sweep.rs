//! Grid sweeps over config fields and seeds, with per-cell summaries.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gflownet::metrics::{read_metrics_csv, MetricRecord, OPTIONAL_COLUMNS};
use gflownet::trainer::RunConfig;
use serde_json::Value;

use crate::config::{self, axis_path, parse_run_config, set_path, ConfigFile};
use crate::{execute, prepare_out_dir, CliError, ERROR_FILE, METRICS_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";

/// One point of the axis grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub values: Vec<(String, Value)>,
    pub dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Job {
    pub cell: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub dir: PathBuf,
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn slug(values: &[(String, Value)]) -> String {
    values
        .iter()
        .map(|(k, v)| {
            let raw = format!("{k}={}", label(v));
            raw.chars()
                .map(|c| if c.is_ascii_alphanumeric() || "=.-_+".contains(c) { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Expands the grid into cells and one job per cell and seed, validating every config.
pub fn plan(file: &ConfigFile, root: &Path) -> Result<(Vec<Cell>, Vec<Job>), CliError> {
    let spec = file
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: the config has no sweep block".into()))?;
    if spec.axes.is_empty() {
        return Err(CliError::Config("sweep: at least one axis is required".into()));
    }
    if spec.seeds.is_empty() {
        return Err(CliError::Config("sweep: a seed list is required".into()));
    }
    let mut grid: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (name, values) in &spec.axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((name.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for (ci, values) in grid.into_iter().enumerate() {
        let dir = root.join(slug(&values));
        for &seed in &spec.seeds {
            let mut doc = file.document.clone();
            for (name, v) in &values {
                set_path(&mut doc, axis_path(name), v.clone())?;
            }
            set_path(&mut doc, "seed", Value::from(seed))?;
            let config = parse_run_config(&doc)
                .map_err(|e| CliError::Config(format!("cell {}: {e}", slug(&values))))?;
            jobs.push(Job {
                cell: ci,
                seed,
                config,
                dir: dir.join(format!("seed{seed}")),
            });
        }
        cells.push(Cell { values, dir });
    }
    Ok((cells, jobs))
}

/// Runs every job with up to `jobs` worker threads; returns the failures.
pub fn run_jobs(jobs: &[Job], workers: usize) -> Vec<(usize, String)> {
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let _ = fs::remove_file(job.dir.join(ERROR_FILE));
                let result = fs::create_dir_all(&job.dir)
                    .map_err(CliError::from)
                    .and_then(|_| execute(&job.config, &job.dir));
                if let Err(e) = result {
                    let msg = e.to_string();
                    let _ = fs::write(job.dir.join(ERROR_FILE), format!("{msg}\n"));
                    eprintln!("{}: {msg}", job.dir.display());
                    failures.lock().unwrap().push((i, msg));
                }
            });
        }
    });
    let mut f = failures.into_inner().unwrap();
    f.sort();
    f
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Final metric row of each successful seed, read back from disk.
pub fn final_rows(jobs: &[Job], cell: usize) -> Vec<MetricRecord> {
    jobs.iter()
        .filter(|j| j.cell == cell && !j.dir.join(ERROR_FILE).exists())
        .filter_map(|j| {
            let f = fs::File::open(j.dir.join(METRICS_FILE)).ok()?;
            read_metrics_csv(f).ok()?.pop()
        })
        .collect()
}

pub fn write_summary(root: &Path, cells: &[Cell], jobs: &[Job]) -> Result<(), CliError> {
    let finals: Vec<Vec<MetricRecord>> = (0..cells.len()).map(|c| final_rows(jobs, c)).collect();
    let mut metrics: Vec<&str> = vec!["trajectories_consumed", "mean_tb_loss"];
    let present: BTreeSet<&str> = finals
        .iter()
        .flatten()
        .flat_map(|r| r.metric_values().into_iter().map(|(k, _)| k))
        .collect();
    metrics.extend(OPTIONAL_COLUMNS.iter().filter(|c| present.contains(**c)));

    let mut w = csv::Writer::from_path(root.join(SUMMARY_FILE)).map_err(|e| CliError::Io(e.to_string()))?;
    let mut header: Vec<String> = cells
        .first()
        .map(|c| c.values.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    header.extend(["n_seeds".to_string(), "n_failed".to_string()]);
    for m in &metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for (ci, cell) in cells.iter().enumerate() {
        let n_seeds = jobs.iter().filter(|j| j.cell == ci).count();
        let rows = &finals[ci];
        let mut rec: Vec<String> = cell.values.iter().map(|(_, v)| label(v)).collect();
        rec.push(n_seeds.to_string());
        rec.push((n_seeds - rows.len()).to_string());
        for m in &metrics {
            let xs: Vec<f64> = rows.iter().filter_map(|r| metric(r, m)).collect();
            if xs.is_empty() {
                rec.extend([String::new(), String::new()]);
            } else {
                let (mean, std) = mean_std(&xs);
                rec.extend([format!("{mean:?}"), format!("{std:?}")]);
            }
        }
        w.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn metric(r: &MetricRecord, name: &str) -> Option<f64> {
    match name {
        "iteration" => Some(r.iteration as f64),
        "trajectories_consumed" => Some(r.trajectories_consumed as f64),
        _ => r.metric_values().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v),
    }
}

pub fn cmd_sweep(config_path: &Path, out: Option<&Path>, force: bool, workers: usize) -> Result<PathBuf, CliError> {
    let file = config::load(config_path)?;
    let root = out
        .map(Path::to_path_buf)
        .or(file.out_dir.clone())
        .unwrap_or_else(|| config::default_out_dir(&file.stem));
    let (cells, jobs) = plan(&file, &root)?;
    prepare_out_dir(&root, force)?;
    let failures = run_jobs(&jobs, workers);
    write_summary(&root, &cells, &jobs)?;
    if failures.is_empty() {
        Ok(root)
    } else {
        Err(CliError::Partial(format!(
            "{} of {} runs failed; see {}",
            failures.len(),
            jobs.len(),
            root.join(SUMMARY_FILE).display()
        )))
    }
}
