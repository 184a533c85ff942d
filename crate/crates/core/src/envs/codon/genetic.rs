//! Standard genetic code, the embedded codon usage table, GC content and CAI.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::env::EnvError;

pub type Codon = [u8; 3];

const BASES: [u8; 4] = *b"TCAG";

/// Amino acids of the 64 codons with bases ordered T, C, A, G at each position.
const STANDARD_CODE: &[u8; 64] = b"FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG";

pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

const USAGE_TSV: &str = include_str!("codon_usage_human.tsv");

fn base_rank(b: u8) -> Option<usize> {
    BASES.iter().position(|&x| x == b)
}

/// Amino acid encoded by a DNA codon, `*` for stops.
pub fn translate(codon: &Codon) -> Result<char, EnvError> {
    let mut idx = 0;
    for &b in codon {
        let r = base_rank(b).ok_or(EnvError::InvalidBase(b as char))?;
        idx = idx * 4 + r;
    }
    Ok(STANDARD_CODE[idx] as char)
}

pub fn all_codons() -> impl Iterator<Item = Codon> {
    (0..64).map(|i| [BASES[i / 16], BASES[i / 4 % 4], BASES[i % 4]])
}

/// Codons of `aa` in lexicographic order.
pub fn synonymous_codons(aa: char) -> Vec<Codon> {
    let mut out: Vec<Codon> = all_codons()
        .filter(|c| translate(c).map(|x| x == aa).unwrap_or(false))
        .collect();
    out.sort();
    out
}

/// Upper-cased amino-acid letters; whitespace is ignored.
pub fn parse_protein(s: &str) -> Result<Vec<char>, EnvError> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            let u = c.to_ascii_uppercase();
            if AMINO_ACIDS.contains(u) {
                Ok(u)
            } else {
                Err(EnvError::InvalidProtein(c))
            }
        })
        .collect()
}

/// Per-thousand codon frequencies.
pub struct CodonUsage {
    freq: HashMap<Codon, f64>,
}

impl CodonUsage {
    pub fn human() -> &'static CodonUsage {
        static TABLE: OnceLock<CodonUsage> = OnceLock::new();
        TABLE.get_or_init(|| CodonUsage::parse(USAGE_TSV).expect("embedded table is valid"))
    }

    /// Parses `codon<TAB>aa<TAB>frequency` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let bad = |line: &str| EnvError::Config(format!("codon usage line `{line}`"));
        let mut freq = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 || fields[0].len() != 3 {
                return Err(bad(line));
            }
            let b = fields[0].as_bytes();
            let codon = [b[0], b[1], b[2]];
            let f: f64 = fields[2].parse().map_err(|_| bad(line))?;
            freq.insert(codon, f);
        }
        if freq.len() != 64 {
            return Err(EnvError::Config(format!("codon usage has {} codons", freq.len())));
        }
        Ok(Self { freq })
    }

    pub fn frequency(&self, codon: &Codon) -> f64 {
        self.freq.get(codon).copied().unwrap_or(0.0)
    }

    /// Frequency relative to the most used synonymous codon.
    pub fn relative_adaptiveness(&self, codon: &Codon) -> Result<f64, EnvError> {
        let aa = translate(codon)?;
        let best = synonymous_codons(aa)
            .iter()
            .map(|c| self.frequency(c))
            .fold(0.0, f64::max);
        Ok(self.frequency(codon) / best)
    }

    pub fn most_frequent(&self, aa: char) -> Codon {
        *synonymous_codons(aa)
            .iter()
            .max_by(|a, b| self.frequency(a).total_cmp(&self.frequency(b)))
            .expect("amino acid has codons")
    }
}

pub fn gc_content(dna: &[u8]) -> f64 {
    if dna.is_empty() {
        return 0.0;
    }
    dna.iter().filter(|&&b| b == b'G' || b == b'C').count() as f64 / dna.len() as f64
}

/// Geometric mean of relative adaptiveness.
pub fn cai(codons: &[Codon], usage: &CodonUsage) -> Result<f64, EnvError> {
    if codons.is_empty() {
        return Ok(1.0);
    }
    let mut log_sum = 0.0;
    for c in codons {
        log_sum += usage.relative_adaptiveness(c)?.ln();
    }
    Ok((log_sum / codons.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_landmarks() {
        assert_eq!(translate(b"ATG").unwrap(), 'M');
        assert_eq!(translate(b"TGG").unwrap(), 'W');
        assert_eq!(translate(b"TAA").unwrap(), '*');
        assert_eq!(translate(b"GCC").unwrap(), 'A');
        assert_eq!(translate(b"AGA").unwrap(), 'R');
        assert!(matches!(translate(b"AXG"), Err(EnvError::InvalidBase('X'))));
    }

    #[test]
    fn synonymous_family_sizes() {
        let sizes: Vec<usize> = AMINO_ACIDS.chars().map(|a| synonymous_codons(a).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 61);
        assert_eq!(synonymous_codons('L').len(), 6);
        assert_eq!(synonymous_codons('S').len(), 6);
        assert_eq!(synonymous_codons('R').len(), 6);
        assert_eq!(synonymous_codons('M'), vec![*b"ATG"]);
        assert_eq!(synonymous_codons('*').len(), 3);
        assert_eq!(*sizes.iter().max().unwrap(), 6);
    }

    #[test]
    fn usage_table_agrees_with_code() {
        for line in USAGE_TSV.lines().filter(|l| !l.starts_with('#')) {
            let f: Vec<&str> = line.split('\t').collect();
            let b = f[0].as_bytes();
            let aa = translate(&[b[0], b[1], b[2]]).unwrap();
            assert_eq!(aa.to_string(), f[1], "{line}");
        }
        let u = CodonUsage::human();
        assert_eq!(u.frequency(b"CTG"), 39.6);
        assert_eq!(u.most_frequent('L'), *b"CTG");
        assert_eq!(u.relative_adaptiveness(b"CTG").unwrap(), 1.0);
    }

    #[test]
    fn gc_and_cai() {
        assert!((gc_content(b"ATG") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(gc_content(b"GCGC"), 1.0);
        let u = CodonUsage::human();
        let best: Vec<Codon> = "MKLW".chars().map(|a| u.most_frequent(a)).collect();
        assert_eq!(cai(&best, u).unwrap(), 1.0);
        let w = u.frequency(b"TTA") / u.frequency(b"CTG");
        let c = cai(&[*b"TTA", *b"ATG"], u).unwrap();
        assert!((c - w.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn protein_parsing() {
        assert_eq!(parse_protein("mk l\n").unwrap(), vec!['M', 'K', 'L']);
        assert!(matches!(parse_protein("MKB"), Err(EnvError::InvalidProtein('B'))));
        assert!(matches!(parse_protein("M*"), Err(EnvError::InvalidProtein('*'))));
    }
}
