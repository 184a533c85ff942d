//! Bit sequences up to length 2N, rewarded when complete and balanced.
//!
//! Bits read as parentheses: 0 opens, 1 closes. Actions 0 and 1 append a bit,
//! action 2 exits, which is allowed at any length.

use serde::{Deserialize, Serialize};

use crate::env::{check_action, ActionId, EnvError, Environment, Step};

pub const APPEND_ZERO: ActionId = ActionId(0);
pub const APPEND_ONE: ActionId = ActionId(1);
pub const EXIT: ActionId = ActionId(2);

/// Every prefix opens at least as many as it closes, and the totals match.
pub fn is_balanced(bits: &[u8]) -> bool {
    let mut depth: i64 = 0;
    for &b in bits {
        depth += if b == 0 { 1 } else { -1 };
        if depth < 0 {
            return false;
        }
    }
    depth == 0
}

/// The n-th Catalan number, exact.
pub fn catalan(n: u32) -> Result<u128, EnvError> {
    // C(k+1) = C(k) * 2(2k+1) / (k+2); the division is always exact.
    let mut c: u128 = 1;
    for k in 0..n as u128 {
        c = c
            .checked_mul(2 * (2 * k + 1))
            .ok_or_else(|| EnvError::Overflow(format!("catalan({n})")))?
            / (k + 2);
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitSeqEnv {
    half_length: usize,
    r_mode: f64,
    r_deceptive: f64,
    deceptive_max_len: usize,
    r_floor: f64,
}

impl BitSeqEnv {
    pub fn new(
        half_length: usize,
        r_mode: f64,
        r_deceptive: f64,
        deceptive_max_len: usize,
        r_floor: f64,
    ) -> Result<Self, EnvError> {
        if half_length == 0 || half_length > 30 {
            return Err(EnvError::Config("bitseq needs 1 <= N <= 30".into()));
        }
        if !(r_mode > 0.0 && r_deceptive > 0.0 && r_floor > 0.0) {
            return Err(EnvError::Config("bitseq rewards must be positive".into()));
        }
        Ok(Self {
            half_length,
            r_mode,
            r_deceptive,
            deceptive_max_len,
            r_floor,
        })
    }

    /// Rewards 1.0 / 1e-3 (length <= 4) / 1e-6.
    pub fn with_defaults(half_length: usize) -> Result<Self, EnvError> {
        Self::new(half_length, 1.0, 1e-3, 4, 1e-6)
    }

    pub fn half_length(&self) -> usize {
        self.half_length
    }

    pub fn max_len(&self) -> usize {
        2 * self.half_length
    }

    pub fn reward(&self, bits: &[u8]) -> f64 {
        if bits.len() == self.max_len() && is_balanced(bits) {
            self.r_mode
        } else {
            self.off_mode_reward(bits.len())
        }
    }

    fn off_mode_reward(&self, len: usize) -> f64 {
        if len > 0 && len <= self.deceptive_max_len {
            self.r_deceptive
        } else {
            self.r_floor
        }
    }

    /// Sum of rewards over all sequences, grouped by length class.
    pub fn partition_function(&self) -> f64 {
        let n_modes = catalan(self.half_length as u32).expect("N <= 30") as f64;
        (0..=self.max_len())
            .map(|len| {
                let count = 2f64.powi(len as i32);
                if len == self.max_len() {
                    n_modes * self.r_mode + (count - n_modes) * self.off_mode_reward(len)
                } else {
                    count * self.off_mode_reward(len)
                }
            })
            .sum()
    }

    /// Target probability of emitting a complete balanced sequence.
    pub fn true_valid_mass(&self) -> f64 {
        let n_modes = catalan(self.half_length as u32).expect("N <= 30") as f64;
        n_modes * self.r_mode / self.partition_function()
    }

    pub fn n_states(&self) -> usize {
        (1usize << (self.max_len() + 1)) - 1
    }

    fn decode_index(&self, idx: usize) -> Vec<u8> {
        // Length-L sequences occupy indices 2^L - 1 .. 2^(L+1) - 2.
        let len = (usize::BITS - (idx + 1).leading_zeros() - 1) as usize;
        let v = idx + 1 - (1 << len);
        (0..len).map(|p| ((v >> (len - 1 - p)) & 1) as u8).collect()
    }
}

/// Renders bits as a 0/1 string.
pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

impl Environment for BitSeqEnv {
    type State = Vec<u8>;

    fn n_actions(&self) -> usize {
        3
    }

    fn initial_state(&self) -> Vec<u8> {
        Vec::new()
    }

    fn forward_actions(&self, s: &Vec<u8>) -> Vec<ActionId> {
        if s.len() < self.max_len() {
            vec![APPEND_ZERO, APPEND_ONE, EXIT]
        } else {
            vec![EXIT]
        }
    }

    fn apply(&self, s: &Vec<u8>, a: ActionId) -> Result<Step<Vec<u8>>, EnvError> {
        check_action(self, s, a)?;
        if a == EXIT {
            return Ok(Step::Sink);
        }
        let mut c = s.clone();
        c.push(a.0 as u8);
        Ok(Step::State(c))
    }

    fn backward_transitions(&self, s: &Vec<u8>) -> Result<Vec<(Vec<u8>, ActionId)>, EnvError> {
        match s.split_last() {
            None => Err(EnvError::NoParents),
            Some((&b, rest)) => Ok(vec![(rest.to_vec(), ActionId(b as usize))]),
        }
    }

    fn log_reward(&self, s: &Vec<u8>) -> Result<f64, EnvError> {
        Ok(self.reward(s).ln())
    }

    fn feature_dim(&self) -> usize {
        3 * self.max_len()
    }

    fn encode_into(&self, s: &Vec<u8>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..self.max_len() {
            let sym = s.get(p).map_or(2, |&b| b as usize);
            out[3 * p + sym] = 1.0;
        }
    }

    fn unique_parents(&self) -> bool {
        true
    }

    fn dense_index(&self, s: &Vec<u8>) -> Option<usize> {
        let v = s.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        Some((1 << s.len()) - 1 + v)
    }

    /// Shortest first, lexicographic within a length.
    fn enumerate_states(&self, cap: usize) -> Result<Vec<Vec<u8>>, EnvError> {
        if self.max_len() >= usize::BITS as usize - 1 || self.n_states() > cap {
            return Err(EnvError::StateSpaceTooLarge { cap });
        }
        Ok((0..self.n_states()).map(|i| self.decode_index(i)).collect())
    }

    fn max_trajectory_len(&self) -> usize {
        self.max_len() + 1
    }

    fn is_mode(&self, s: &Vec<u8>) -> bool {
        s.len() == self.max_len() && is_balanced(s)
    }

    fn has_modes(&self) -> bool {
        true
    }
}
