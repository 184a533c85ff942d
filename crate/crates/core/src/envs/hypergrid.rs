//! d-dimensional hypergrid with corner-bump rewards.
//!
//! Coordinates run over `0..H` in every dimension. Action `i < d` increments
//! coordinate `i`; action `d` exits, which is allowed from every cell.

use serde::{Deserialize, Serialize};

use crate::env::{check_action, ActionId, EnvError, Environment, Step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypergridEnv {
    dims: usize,
    height: usize,
    r0: f64,
    r1: f64,
    r2: f64,
}

/// `0.25 < |x/H - 0.5|`, evaluated in exact integer arithmetic.
fn in_outer_band(x: usize, h: usize) -> bool {
    let dev = (2 * x as i64 - h as i64).unsigned_abs();
    2 * dev > h as u64
}

/// `0.3 < |x/H - 0.5| < 0.4`, evaluated in exact integer arithmetic.
fn in_corner_band(x: usize, h: usize) -> bool {
    let dev = (2 * x as i64 - h as i64).unsigned_abs();
    let h = h as u64;
    3 * h < 5 * dev && 5 * dev < 4 * h
}

/// Reward of cell `x` on a grid of height `h`.
pub fn hypergrid_reward(x: &[usize], h: usize, r0: f64, r1: f64, r2: f64) -> Result<f64, EnvError> {
    if let Some(&coord) = x.iter().find(|&&c| c >= h) {
        return Err(EnvError::OutOfGrid { coord, height: h });
    }
    let outer = x.iter().all(|&c| in_outer_band(c, h));
    let corner = x.iter().all(|&c| in_corner_band(c, h));
    Ok(r0 + if outer { r1 } else { 0.0 } + if corner { r2 } else { 0.0 })
}

impl HypergridEnv {
    pub fn new(dims: usize, height: usize, r0: f64, r1: f64, r2: f64) -> Result<Self, EnvError> {
        if dims == 0 || height == 0 {
            return Err(EnvError::Config("hypergrid needs dims >= 1 and height >= 1".into()));
        }
        if !(r0 > 0.0 && r1 >= 0.0 && r2 >= 0.0) {
            return Err(EnvError::Config("hypergrid needs r0 > 0 and r1, r2 >= 0".into()));
        }
        Ok(Self {
            dims,
            height,
            r0,
            r1,
            r2,
        })
    }

    /// r1 = 0.5 and r2 = 2.0.
    pub fn with_defaults(dims: usize, height: usize, r0: f64) -> Result<Self, EnvError> {
        Self::new(dims, height, r0, 0.5, 2.0)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn reward(&self, x: &[usize]) -> Result<f64, EnvError> {
        hypergrid_reward(x, self.height, self.r0, self.r1, self.r2)
    }

    /// Per-coordinate predicate a cell must satisfy in every dimension to
    /// attain the maximal reward.
    fn mode_band(&self) -> Option<fn(usize, usize) -> bool> {
        let h = self.height;
        if self.r2 > 0.0 && (0..h).any(|v| in_corner_band(v, h)) {
            Some(in_corner_band)
        } else if self.r1 > 0.0 && (0..h).any(|v| in_outer_band(v, h)) {
            Some(in_outer_band)
        } else {
            None
        }
    }

    pub fn max_reward(&self) -> f64 {
        let h = self.height;
        let corner = self.r2 > 0.0 && (0..h).any(|v| in_corner_band(v, h));
        let outer = (0..h).any(|v| in_outer_band(v, h));
        self.r0 + if outer { self.r1 } else { 0.0 } + if corner { self.r2 } else { 0.0 }
    }

    /// Number of cells attaining the maximal reward.
    pub fn mode_count(&self) -> u128 {
        match self.mode_band() {
            Some(band) => {
                let per_dim = (0..self.height).filter(|&v| band(v, self.height)).count() as u128;
                per_dim.pow(self.dims as u32)
            }
            None => (self.height as u128).pow(self.dims as u32),
        }
    }

    fn state_count(&self) -> Option<usize> {
        (self.height as u128)
            .checked_pow(self.dims as u32)
            .and_then(|n| usize::try_from(n).ok())
    }

    fn decode_index(&self, mut idx: usize) -> Vec<usize> {
        let mut x = vec![0; self.dims];
        for d in (0..self.dims).rev() {
            x[d] = idx % self.height;
            idx /= self.height;
        }
        x
    }
}

impl Environment for HypergridEnv {
    type State = Vec<usize>;

    fn n_actions(&self) -> usize {
        self.dims + 1
    }

    fn initial_state(&self) -> Vec<usize> {
        vec![0; self.dims]
    }

    fn forward_actions(&self, s: &Vec<usize>) -> Vec<ActionId> {
        let mut out: Vec<ActionId> = (0..self.dims)
            .filter(|&i| s[i] + 1 < self.height)
            .map(ActionId)
            .collect();
        out.push(self.exit_action());
        out
    }

    fn apply(&self, s: &Vec<usize>, a: ActionId) -> Result<Step<Vec<usize>>, EnvError> {
        check_action(self, s, a)?;
        if a == self.exit_action() {
            return Ok(Step::Sink);
        }
        let mut c = s.clone();
        c[a.0] += 1;
        Ok(Step::State(c))
    }

    fn backward_transitions(&self, s: &Vec<usize>) -> Result<Vec<(Vec<usize>, ActionId)>, EnvError> {
        let parents: Vec<_> = (0..self.dims)
            .filter(|&i| s[i] > 0)
            .map(|i| {
                let mut p = s.clone();
                p[i] -= 1;
                (p, ActionId(i))
            })
            .collect();
        if parents.is_empty() {
            Err(EnvError::NoParents)
        } else {
            Ok(parents)
        }
    }

    fn log_reward(&self, s: &Vec<usize>) -> Result<f64, EnvError> {
        Ok(self.reward(s)?.ln())
    }

    fn feature_dim(&self) -> usize {
        self.dims * self.height
    }

    fn encode_into(&self, s: &Vec<usize>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (d, &x) in s.iter().enumerate() {
            out[d * self.height + x] = 1.0;
        }
    }

    fn dense_index(&self, s: &Vec<usize>) -> Option<usize> {
        Some(s.iter().fold(0, |acc, &x| acc * self.height + x))
    }

    /// Row-major order, which is topological since every action raises the index.
    fn enumerate_states(&self, cap: usize) -> Result<Vec<Vec<usize>>, EnvError> {
        match self.state_count() {
            Some(n) if n <= cap => Ok((0..n).map(|i| self.decode_index(i)).collect()),
            _ => Err(EnvError::StateSpaceTooLarge { cap }),
        }
    }

    fn max_trajectory_len(&self) -> usize {
        self.dims * (self.height - 1) + 1
    }

    fn is_mode(&self, s: &Vec<usize>) -> bool {
        match self.mode_band() {
            Some(band) => s.iter().all(|&x| band(x, self.height)),
            None => true,
        }
    }

    fn has_modes(&self) -> bool {
        true
    }
}
