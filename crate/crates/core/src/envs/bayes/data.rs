//! Observational datasets and the linear-Gaussian SCM generator.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dag, MAX_NODES};
use crate::env::EnvError;

/// An n x d sample matrix with column names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    /// Row-major values.
    values: Vec<f64>,
}

impl Dataset {
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let d = names.len();
        assert!(rows.iter().all(|r| r.len() == d), "row width differs from header");
        Self {
            names,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_columns(names: Vec<String>, cols: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), cols.len());
        let n = cols.first().map_or(0, Vec::len);
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        Self::from_rows(names, rows)
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_samples(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_vars() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.value(i, j)).collect()
    }
}

/// Samples an upper-triangular Erdős–Rényi DAG and data from
/// `X_j = Σ_{i ∈ Pa(j)} X_i + ε_j`, `ε_j ~ N(0, σ²)`, in index order.
pub fn generate_er_scm(
    d: usize,
    edge_prob: f64,
    n_samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Dag, Dataset), EnvError> {
    if !(2..=MAX_NODES).contains(&d) || !(0.0..=1.0).contains(&edge_prob) || !(noise_sigma > 0.0) {
        return Err(EnvError::Config("generate_er_scm needs d >= 2, p in [0, 1], sigma > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Dag::empty(d);
    for i in 0..d {
        for j in i + 1..d {
            if rng.random::<f64>() < edge_prob {
                g = g.with_edge(i, j);
            }
        }
    }
    let noise = Normal::new(0.0, noise_sigma).expect("sigma > 0");
    let parents: Vec<Vec<usize>> = (0..d).map(|j| g.parents(j)).collect();
    let rows = (0..n_samples)
        .map(|_| {
            let mut row = vec![0.0; d];
            for j in 0..d {
                row[j] = parents[j].iter().map(|&i| row[i]).sum::<f64>() + noise.sample(&mut rng);
            }
            row
        })
        .collect();
    let names = (0..d).map(|j| format!("X{j}")).collect();
    Ok((g, Dataset::from_rows(names, rows)))
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(data.names())?;
    for i in 0..data.n_samples() {
        w.write_record((0..data.n_vars()).map(|j| format!("{:?}", data.value(i, j))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset, EnvError> {
    let bad = |e: String| EnvError::Config(format!("dataset csv: {e}"));
    let mut r = csv::Reader::from_reader(input);
    let names: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != names.len() {
            return Err(bad("row width differs from header".into()));
        }
        rows.push(row);
    }
    Ok(Dataset::from_rows(names, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_edge_prob_gives_empty_graph() {
        let (g, data) = generate_er_scm(4, 0.0, 2000, 1.5, 0).unwrap();
        assert_eq!(g.n_edges(), 0);
        for j in 0..4 {
            let c = data.column(j);
            let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
            assert!((var - 2.25).abs() < 0.25, "var={var}");
        }
    }

    #[test]
    fn coupled_pair_covariance() {
        // Cov(X0, X0 + e) = Var(X0) = σ²; the sample covariance has sd ≈ σ² √(3 / n).
        let n = 10_000;
        let (g, data) = generate_er_scm(2, 1.0, n, 1.0, 4).unwrap();
        assert!(g.has_edge(0, 1));
        let (a, b) = (data.column(0), data.column(1));
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64;
        let sd = (3.0 / n as f64).sqrt();
        assert!((cov - 1.0).abs() < 3.0 * sd, "cov={cov}");
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_er_scm(5, 0.5, 30, 1.0, 9).unwrap();
        let b = generate_er_scm(5, 0.5, 30, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.0.edges().iter().all(|&(i, j)| i < j));
    }

    #[test]
    fn csv_round_trip() {
        let (_, data) = generate_er_scm(3, 0.5, 20, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("X0,X1,X2\n"));
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), data);
    }
}
