//! Evaluation metrics and the per-evaluation metric record.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::envs::bitseq::is_balanced;
use crate::envs::{BitSeqEnv, Dag};
use crate::gflownet::TerminalDistribution;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("distributions are defined on different terminal sets")]
    DomainMismatch,
    #[error("graph has {got} nodes, expected {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("ground truth has no positive or no negative edges")]
    DegenerateLabels,
    #[error("need {needed} distinct samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("malformed metrics file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(1/|X|)·Σ_x |p(x) − q(x)|` over a shared terminal set.
pub fn mean_l1<S: Clone + Eq + Hash>(
    p: &TerminalDistribution<S>,
    q: &TerminalDistribution<S>,
) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::DomainMismatch);
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = if p.states == q.states {
        p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum()
    } else {
        let qm = q.to_map();
        let mut acc = 0.0;
        for (s, a) in p.states.iter().zip(&p.probs) {
            acc += (a - qm.get(s).ok_or(MetricError::DomainMismatch)?).abs();
        }
        acc
    };
    Ok(total / p.len() as f64)
}

/// Sample frequencies on the support of `support`.
pub fn empirical_distribution<'a, S: Clone + Eq + Hash + 'a>(
    samples: impl IntoIterator<Item = &'a S>,
    support: &[S],
) -> Result<TerminalDistribution<S>, MetricError> {
    let index: HashMap<&S, usize> = support.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut counts = vec![0usize; support.len()];
    let mut n = 0usize;
    for s in samples {
        counts[*index.get(s).ok_or(MetricError::DomainMismatch)?] += 1;
        n += 1;
    }
    let probs = counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect();
    Ok(TerminalDistribution {
        states: support.to_vec(),
        probs,
    })
}

/// Distinct mode states among `samples`.
pub fn modes_found<'a, E: Environment>(samples: impl IntoIterator<Item = &'a E::State>, env: &E) -> usize
where
    E::State: 'a,
{
    samples
        .into_iter()
        .filter(|s| env.is_mode(s))
        .collect::<HashSet<_>>()
        .len()
}

fn is_valid_complete(env: &BitSeqEnv, s: &[u8]) -> bool {
    s.len() == env.max_len() && is_balanced(s)
}

/// Distinct complete balanced sequences among `samples`.
pub fn bitseq_diversity(samples: &[Vec<u8>], env: &BitSeqEnv) -> usize {
    samples
        .iter()
        .filter(|s| is_valid_complete(env, s))
        .collect::<HashSet<_>>()
        .len()
}

/// |sampled fraction of complete balanced sequences − their target mass|.
pub fn bitseq_exploration_error(samples: &[Vec<u8>], env: &BitSeqEnv) -> f64 {
    if samples.is_empty() {
        return env.true_valid_mass();
    }
    let hits = samples.iter().filter(|s| is_valid_complete(env, s)).count();
    (hits as f64 / samples.len() as f64 - env.true_valid_mass()).abs()
}

/// Structural Hamming distance; a reversed edge costs 1.
pub fn shd(g: &Dag, truth: &Dag) -> Result<usize, MetricError> {
    let d = truth.n_nodes();
    if g.n_nodes() != d {
        return Err(MetricError::SizeMismatch {
            got: g.n_nodes(),
            expected: d,
        });
    }
    let mut dist = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let a = (g.has_edge(i, j), g.has_edge(j, i));
            let b = (truth.has_edge(i, j), truth.has_edge(j, i));
            if a != b {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

pub fn expected_shd(samples: &[Dag], truth: &Dag) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for g in samples {
        total += shd(g, truth)?;
    }
    Ok(total as f64 / samples.len() as f64)
}

/// Row-major d x d edge frequencies among posterior samples.
pub fn edge_marginals(samples: &[Dag], d: usize) -> Result<Vec<f64>, MetricError> {
    let mut m = vec![0.0; d * d];
    for g in samples {
        if g.n_nodes() != d {
            return Err(MetricError::SizeMismatch {
                got: g.n_nodes(),
                expected: d,
            });
        }
        for (i, j) in g.edges() {
            m[i * d + j] += 1.0;
        }
    }
    if !samples.is_empty() {
        m.iter_mut().for_each(|v| *v /= samples.len() as f64);
    }
    Ok(m)
}

/// Rank AUC of off-diagonal marginals against the true adjacency, ties half.
pub fn edge_roc_auc(marginals: &[f64], truth: &Dag) -> Result<f64, MetricError> {
    let d = truth.n_nodes();
    if marginals.len() != d * d {
        return Err(MetricError::SizeMismatch {
            got: marginals.len(),
            expected: d * d,
        });
    }
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                scored.push((marginals[i * d + j], truth.has_edge(i, j)));
            }
        }
    }
    let n_pos = scored.iter().filter(|(_, y)| *y).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Average ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg_rank * scored[i..j].iter().filter(|(_, y)| *y).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean reward of the `k` best distinct samples.
pub fn topk_mean_reward<K: Eq + Hash>(samples: impl IntoIterator<Item = (K, f64)>, k: usize) -> Result<f64, MetricError> {
    let mut best: HashMap<K, f64> = HashMap::new();
    for (key, r) in samples {
        best.entry(key).or_insert(r);
    }
    if best.len() < k || k == 0 {
        return Err(MetricError::InsufficientSamples {
            needed: k.max(1),
            got: best.len(),
        });
    }
    let mut rewards: Vec<f64> = best.into_values().collect();
    rewards.sort_by(|a, b| b.total_cmp(a));
    Ok(rewards[..k].iter().sum::<f64>() / k as f64)
}

/// One evaluation point of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: u64,
    pub trajectories_consumed: u64,
    pub mean_tb_loss: f64,
    pub log_z: Option<f64>,
    pub mean_l1: Option<f64>,
    pub modes_found: Option<u64>,
    pub diversity: Option<u64>,
    pub exploration_error: Option<f64>,
    pub e_shd: Option<f64>,
    pub roc_auc: Option<f64>,
    pub topk_reward: Option<f64>,
    pub exit_prob_s0: Option<f64>,
}

/// Optional columns in their fixed order.
pub const OPTIONAL_COLUMNS: [&str; 9] = [
    "log_z",
    "mean_l1",
    "modes_found",
    "diversity",
    "exploration_error",
    "e_shd",
    "roc_auc",
    "topk_reward",
    "exit_prob_s0",
];

impl MetricRecord {
    fn optional(&self, col: &str) -> Option<String> {
        match col {
            "log_z" => self.log_z.map(fmt_f64),
            "mean_l1" => self.mean_l1.map(fmt_f64),
            "modes_found" => self.modes_found.map(|v| v.to_string()),
            "diversity" => self.diversity.map(|v| v.to_string()),
            "exploration_error" => self.exploration_error.map(fmt_f64),
            "e_shd" => self.e_shd.map(fmt_f64),
            "roc_auc" => self.roc_auc.map(fmt_f64),
            "topk_reward" => self.topk_reward.map(fmt_f64),
            "exit_prob_s0" => self.exit_prob_s0.map(fmt_f64),
            _ => None,
        }
    }

    /// Named metric values, the three fixed columns excluded.
    pub fn metric_values(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("mean_tb_loss", self.mean_tb_loss)];
        for col in OPTIONAL_COLUMNS {
            if let Some(v) = self.optional(col) {
                out.push((col, v.parse().expect("formatted number")));
            }
        }
        out
    }

    fn set(&mut self, col: &str, v: &str) -> Result<(), MetricError> {
        let bad = || MetricError::Malformed(format!("bad value `{v}` in column {col}"));
        let f = || v.parse::<f64>().map_err(|_| bad());
        let u = || v.parse::<u64>().map_err(|_| bad());
        match col {
            "iteration" => self.iteration = u()?,
            "trajectories_consumed" => self.trajectories_consumed = u()?,
            "mean_tb_loss" => self.mean_tb_loss = f()?,
            "log_z" => self.log_z = Some(f()?),
            "mean_l1" => self.mean_l1 = Some(f()?),
            "modes_found" => self.modes_found = Some(u()?),
            "diversity" => self.diversity = Some(u()?),
            "exploration_error" => self.exploration_error = Some(f()?),
            "e_shd" => self.e_shd = Some(f()?),
            "roc_auc" => self.roc_auc = Some(f()?),
            "topk_reward" => self.topk_reward = Some(f()?),
            "exit_prob_s0" => self.exit_prob_s0 = Some(f()?),
            other => return Err(MetricError::Malformed(format!("unknown column {other}"))),
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Columns present in `rows`: the fixed three, then any optional column
/// filled on some row.
pub fn columns(rows: &[MetricRecord]) -> Vec<&'static str> {
    let mut cols = vec!["iteration", "trajectories_consumed", "mean_tb_loss"];
    for c in OPTIONAL_COLUMNS {
        if rows.iter().any(|r| r.optional(c).is_some()) {
            cols.push(c);
        }
    }
    cols
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRecord], mut out: W) -> Result<(), MetricError> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    let cols = columns(rows);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&cols)?;
    for r in rows {
        let fields: Vec<String> = cols
            .iter()
            .map(|&c| match c {
                "iteration" => r.iteration.to_string(),
                "trajectories_consumed" => r.trajectories_consumed.to_string(),
                "mean_tb_loss" => fmt_f64(r.mean_tb_loss),
                c => r.optional(c).unwrap_or_default(),
            })
            .collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRecord>, MetricError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for need in ["iteration", "trajectories_consumed", "mean_tb_loss"] {
        if !header.iter().any(|h| h == need) {
            return Err(MetricError::Malformed(format!("missing column {need}")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut row = MetricRecord::default();
        for (col, v) in header.iter().zip(rec.iter()) {
            if !v.is_empty() {
                row.set(col, v)?;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
