//! DAG structure learning: states are DAGs, actions add one edge at a time.
//!
//! Action `i * d + j` adds the edge `i -> j`; action `d * d` exits and is
//! valid from every DAG.

mod bge;
mod data;

pub use bge::{BgeParams, BgeScorer};
pub use data::{generate_er_scm, read_dataset_csv, write_dataset_csv, Dataset};

use serde::{Deserialize, Serialize};

use crate::env::{check_action, enumerate_by_levels, ActionId, EnvError, Environment, Step};

/// Largest supported node count (one `u32` bitmask per node).
pub const MAX_NODES: usize = 32;

/// A directed graph stored as child bitmasks, one per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dag {
    children: Vec<u32>,
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        assert!(d <= MAX_NODES, "at most {MAX_NODES} nodes");
        Self { children: vec![0; d] }
    }

    /// Builds from a row-major 0/1 adjacency (`adj[i * d + j]` for `i -> j`).
    pub fn from_adjacency(d: usize, adj: &[u8]) -> Self {
        assert_eq!(adj.len(), d * d);
        let mut g = Self::empty(d);
        for i in 0..d {
            for j in 0..d {
                if adj[i * d + j] != 0 {
                    g.children[i] |= 1 << j;
                }
            }
        }
        g
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(d);
        for &(i, j) in edges {
            g.children[i] |= 1 << j;
        }
        g
    }

    pub fn n_nodes(&self) -> usize {
        self.children.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.children[i] >> j & 1 == 1
    }

    pub fn n_edges(&self) -> usize {
        self.children.iter().map(|c| c.count_ones() as usize).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let d = self.n_nodes();
        (0..d)
            .flat_map(|i| (0..d).filter(move |&j| self.has_edge(i, j)).map(move |j| (i, j)))
            .collect()
    }

    pub fn parent_mask(&self, j: usize) -> u32 {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, &c)| c >> j & 1 == 1)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        let m = self.parent_mask(j);
        (0..self.n_nodes()).filter(|&i| m >> i & 1 == 1).collect()
    }

    /// True when a directed path leads from `from` to `to` (length >= 0).
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen: u32 = 1 << from;
        let mut frontier: u32 = 1 << from;
        while frontier != 0 {
            if seen >> to & 1 == 1 {
                return true;
            }
            let mut next = 0;
            let mut f = frontier;
            while f != 0 {
                let v = f.trailing_zeros() as usize;
                f &= f - 1;
                next |= self.children[v];
            }
            frontier = next & !seen;
            seen |= next;
        }
        seen >> to & 1 == 1
    }

    /// Whether `i -> j` can be added without a self-loop, duplicate or cycle.
    pub fn can_add(&self, i: usize, j: usize) -> bool {
        i != j && !self.has_edge(i, j) && !self.reaches(j, i)
    }

    pub fn with_edge(&self, i: usize, j: usize) -> Self {
        let mut g = self.clone();
        g.children[i] |= 1 << j;
        g
    }

    pub fn without_edge(&self, i: usize, j: usize) -> Self {
        let mut g = self.clone();
        g.children[i] &= !(1 << j);
        g
    }

    /// Kahn's algorithm.
    pub fn is_acyclic(&self) -> bool {
        let d = self.n_nodes();
        let mut indeg: Vec<u32> = (0..d).map(|j| self.parent_mask(j).count_ones()).collect();
        let mut queue: Vec<usize> = (0..d).filter(|&j| indeg[j] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop() {
            visited += 1;
            for j in 0..d {
                if self.has_edge(v, j) {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        queue.push(j);
                    }
                }
            }
        }
        visited == d
    }

    pub fn to_adjacency(&self) -> Vec<u8> {
        let d = self.n_nodes();
        let mut out = vec![0; d * d];
        for (i, j) in self.edges() {
            out[i * d + j] = 1;
        }
        out
    }
}

pub struct BayesDagEnv {
    scorer: BgeScorer,
    ground_truth: Option<Dag>,
    /// Score of the empty graph, subtracted from every log reward.
    baseline: f64,
}

impl std::fmt::Debug for BayesDagEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BayesDagEnv")
            .field("n_nodes", &self.n_nodes())
            .field("n_samples", &self.scorer.n_samples())
            .finish()
    }
}

impl BayesDagEnv {
    pub fn new(dataset: &Dataset, params: BgeParams, ground_truth: Option<Dag>) -> Result<Self, EnvError> {
        let d = dataset.n_vars();
        if !(2..=MAX_NODES).contains(&d) {
            return Err(EnvError::Config(format!("bayes env needs 2..={MAX_NODES} nodes")));
        }
        if let Some(g) = &ground_truth {
            if g.n_nodes() != d {
                return Err(EnvError::Config("ground truth size differs from the dataset".into()));
            }
        }
        let scorer = BgeScorer::new(dataset, params)?;
        let baseline = (0..d).map(|j| scorer.local_score(j, 0)).sum::<Result<f64, _>>()?;
        Ok(Self {
            scorer,
            ground_truth,
            baseline,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.scorer.n_vars()
    }

    pub fn scorer(&self) -> &BgeScorer {
        &self.scorer
    }

    pub fn ground_truth(&self) -> Option<&Dag> {
        self.ground_truth.as_ref()
    }

    /// Σ_j LocalScore(X_j | Pa(X_j)).
    pub fn log_score(&self, g: &Dag) -> Result<f64, EnvError> {
        (0..self.n_nodes())
            .map(|j| self.scorer.local_score(j, g.parent_mask(j)))
            .sum()
    }

    fn edge_of(&self, a: ActionId) -> (usize, usize) {
        let d = self.n_nodes();
        (a.0 / d, a.0 % d)
    }
}

impl Environment for BayesDagEnv {
    type State = Dag;

    fn n_actions(&self) -> usize {
        let d = self.n_nodes();
        d * d + 1
    }

    fn initial_state(&self) -> Dag {
        Dag::empty(self.n_nodes())
    }

    fn forward_actions(&self, g: &Dag) -> Vec<ActionId> {
        let d = self.n_nodes();
        let mut out: Vec<ActionId> = (0..d * d)
            .filter(|&a| g.can_add(a / d, a % d))
            .map(ActionId)
            .collect();
        out.push(self.exit_action());
        out
    }

    fn apply(&self, g: &Dag, a: ActionId) -> Result<Step<Dag>, EnvError> {
        check_action(self, g, a)?;
        if a == self.exit_action() {
            return Ok(Step::Sink);
        }
        let (i, j) = self.edge_of(a);
        Ok(Step::State(g.with_edge(i, j)))
    }

    fn backward_transitions(&self, g: &Dag) -> Result<Vec<(Dag, ActionId)>, EnvError> {
        let d = self.n_nodes();
        let out: Vec<_> = g
            .edges()
            .into_iter()
            .map(|(i, j)| (g.without_edge(i, j), ActionId(i * d + j)))
            .collect();
        if out.is_empty() {
            Err(EnvError::NoParents)
        } else {
            Ok(out)
        }
    }

    /// The BGe score relative to the empty graph.
    fn log_reward(&self, g: &Dag) -> Result<f64, EnvError> {
        Ok(self.log_score(g)? - self.baseline)
    }

    fn feature_dim(&self) -> usize {
        self.n_nodes() * self.n_nodes()
    }

    fn encode_into(&self, g: &Dag, out: &mut [f64]) {
        let d = self.n_nodes();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = if g.has_edge(i, j) { 1.0 } else { 0.0 };
            }
        }
    }

    /// Level order by edge count.
    fn enumerate_states(&self, cap: usize) -> Result<Vec<Dag>, EnvError> {
        enumerate_by_levels(self, cap)
    }

    fn max_trajectory_len(&self) -> usize {
        let d = self.n_nodes();
        d * (d - 1) / 2 + 1
    }
}
