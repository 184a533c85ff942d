//! Nussinov-style folding energy: the minimum total pair energy over all
//! nested secondary structures.

use crate::env::EnvError;

/// Bases between the two ends of a pair must number at least this many.
pub const MIN_HAIRPIN: usize = 3;

/// Normalized RNA bases (T becomes U).
pub fn to_rna(s: &str) -> Result<Vec<u8>, EnvError> {
    s.chars()
        .map(|c| match c.to_ascii_uppercase() {
            'A' => Ok(b'A'),
            'C' => Ok(b'C'),
            'G' => Ok(b'G'),
            'U' | 'T' => Ok(b'U'),
            _ => Err(EnvError::InvalidBase(c)),
        })
        .collect()
}

/// GC = -3, AU = -2, GU = -1; `None` for non-pairing bases.
pub fn pair_energy(a: u8, b: u8) -> Option<f64> {
    match (a.min(b), a.max(b)) {
        (b'C', b'G') => Some(-3.0),
        (b'A', b'U') => Some(-2.0),
        (b'G', b'U') => Some(-1.0),
        _ => None,
    }
}

pub fn nussinov_mfe(seq: &str) -> Result<f64, EnvError> {
    Ok(mfe_of_bases(&to_rna(seq)?))
}

pub fn mfe_of_bases(s: &[u8]) -> f64 {
    let n = s.len();
    if n < MIN_HAIRPIN + 2 {
        return 0.0;
    }
    // e[i][j]: best energy of s[i..=j]; empty ranges are 0.
    let mut e = vec![vec![0.0f64; n]; n];
    for span in MIN_HAIRPIN + 1..n {
        for i in 0..n - span {
            let j = i + span;
            let mut best = e[i + 1][j].min(e[i][j - 1]);
            if let Some(p) = pair_energy(s[i], s[j]) {
                best = best.min(e[i + 1][j - 1] + p);
            }
            for k in i + 1..j {
                best = best.min(e[i][k] + e[k + 1][j]);
            }
            e[i][j] = best;
        }
    }
    e[0][n - 1]
}
