//! Codon design: choose one synonymous codon per amino acid, left to right.
//!
//! At position t action `k` picks the k-th synonymous codon (lexicographic)
//! of amino acid t. Action 6 exits and is valid only once every position is
//! filled.

mod genetic;
mod nussinov;

pub use genetic::{
    all_codons, cai, gc_content, parse_protein, synonymous_codons, translate, Codon, CodonUsage,
    AMINO_ACIDS,
};
pub use nussinov::{mfe_of_bases, nussinov_mfe, pair_energy, to_rna, MIN_HAIRPIN};

use serde::{Deserialize, Serialize};

use crate::env::{check_action, enumerate_by_levels, ActionId, EnvError, Environment, Step};

/// Largest synonymous family (L, S, R).
pub const MAX_SYNONYMS: usize = 6;

/// Rewards are clamped from below to stay strictly positive.
pub const REWARD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodonWeights {
    pub gc: f64,
    pub mfe: f64,
    pub cai: f64,
}

impl Default for CodonWeights {
    fn default() -> Self {
        Self {
            gc: 1.0,
            mfe: 1.0,
            cai: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodonScore {
    pub gc: f64,
    pub mfe: f64,
    pub cai: f64,
    pub reward: f64,
}

pub struct CodonEnv {
    protein: Vec<char>,
    synonyms: Vec<Vec<Codon>>,
    offsets: Vec<usize>,
    weights: CodonWeights,
    usage: &'static CodonUsage,
}

impl std::fmt::Debug for CodonEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CodonEnv")
            .field("protein", &self.protein_string())
            .field("weights", &self.weights)
            .finish()
    }
}

impl CodonEnv {
    pub fn new(protein: &str, weights: CodonWeights) -> Result<Self, EnvError> {
        let protein = parse_protein(protein)?;
        if protein.is_empty() {
            return Err(EnvError::Config("protein is empty".into()));
        }
        if !(weights.gc >= 0.0 && weights.mfe >= 0.0 && weights.cai >= 0.0) {
            return Err(EnvError::Config("codon weights must be non-negative".into()));
        }
        let synonyms: Vec<Vec<Codon>> = protein.iter().map(|&aa| synonymous_codons(aa)).collect();
        let mut offsets = Vec::with_capacity(protein.len() + 1);
        let mut acc = 0;
        for s in &synonyms {
            offsets.push(acc);
            acc += s.len() + 1;
        }
        offsets.push(acc);
        Ok(Self {
            protein,
            synonyms,
            offsets,
            weights,
            usage: CodonUsage::human(),
        })
    }

    pub fn len(&self) -> usize {
        self.protein.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protein.is_empty()
    }

    pub fn protein_string(&self) -> String {
        self.protein.iter().collect()
    }

    pub fn synonyms(&self, t: usize) -> &[Codon] {
        &self.synonyms[t]
    }

    pub fn codons(&self, choices: &[u8]) -> Vec<Codon> {
        choices
            .iter()
            .enumerate()
            .map(|(t, &c)| self.synonyms[t][c as usize])
            .collect()
    }

    pub fn dna(&self, choices: &[u8]) -> String {
        self.codons(choices)
            .iter()
            .flat_map(|c| c.iter().map(|&b| b as char))
            .collect()
    }

    /// Translates the chosen codons back to amino acids.
    pub fn decode(&self, choices: &[u8]) -> Result<String, EnvError> {
        self.codons(choices).iter().map(translate).collect()
    }

    /// Choice indices of the most frequent codon at every position.
    pub fn optimal_choices(&self) -> Vec<u8> {
        self.protein
            .iter()
            .enumerate()
            .map(|(t, &aa)| {
                let best = self.usage.most_frequent(aa);
                self.synonyms[t].iter().position(|c| *c == best).expect("synonym") as u8
            })
            .collect()
    }

    pub fn score(&self, choices: &[u8]) -> Result<CodonScore, EnvError> {
        if choices.len() != self.len() {
            return Err(EnvError::IncompleteSequence {
                len: choices.len(),
                expected: self.len(),
            });
        }
        let codons = self.codons(choices);
        let dna: Vec<u8> = codons.iter().flatten().copied().collect();
        let gc = gc_content(&dna);
        let mfe = mfe_of_bases(&to_rna(std::str::from_utf8(&dna).expect("ascii"))?);
        let cai = cai(&codons, self.usage)?;
        let w = &self.weights;
        let raw = w.gc * gc - w.mfe * mfe + w.cai * cai;
        Ok(CodonScore {
            gc,
            mfe,
            cai,
            reward: raw.max(REWARD_FLOOR),
        })
    }

    /// `w1·GC − w2·MFE + w3·CAI`, floored at [`REWARD_FLOOR`].
    pub fn codon_reward(&self, choices: &[u8]) -> Result<f64, EnvError> {
        Ok(self.score(choices)?.reward)
    }
}

impl Environment for CodonEnv {
    type State = Vec<u8>;

    fn n_actions(&self) -> usize {
        MAX_SYNONYMS + 1
    }

    fn initial_state(&self) -> Vec<u8> {
        Vec::new()
    }

    fn forward_actions(&self, s: &Vec<u8>) -> Vec<ActionId> {
        if s.len() == self.len() {
            vec![self.exit_action()]
        } else {
            (0..self.synonyms[s.len()].len()).map(ActionId).collect()
        }
    }

    fn apply(&self, s: &Vec<u8>, a: ActionId) -> Result<Step<Vec<u8>>, EnvError> {
        check_action(self, s, a)?;
        if a == self.exit_action() {
            return Ok(Step::Sink);
        }
        let mut c = s.clone();
        c.push(a.0 as u8);
        Ok(Step::State(c))
    }

    fn backward_transitions(&self, s: &Vec<u8>) -> Result<Vec<(Vec<u8>, ActionId)>, EnvError> {
        match s.split_last() {
            None => Err(EnvError::NoParents),
            Some((&c, rest)) => Ok(vec![(rest.to_vec(), ActionId(c as usize))]),
        }
    }

    fn log_reward(&self, s: &Vec<u8>) -> Result<f64, EnvError> {
        if s.len() != self.len() {
            return Err(EnvError::NotTerminable(format!("{s:?}")));
        }
        Ok(self.codon_reward(s)?.ln())
    }

    fn feature_dim(&self) -> usize {
        self.offsets[self.len()]
    }

    fn encode_into(&self, s: &Vec<u8>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..self.len() {
            let sym = s.get(t).map_or(self.synonyms[t].len(), |&c| c as usize);
            out[self.offsets[t] + sym] = 1.0;
        }
    }

    fn unique_parents(&self) -> bool {
        true
    }

    fn enumerate_states(&self, cap: usize) -> Result<Vec<Vec<u8>>, EnvError> {
        enumerate_by_levels(self, cap)
    }

    fn max_trajectory_len(&self) -> usize {
        self.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn met_only_protein_is_forced() {
        let env = CodonEnv::new("M", CodonWeights::default()).unwrap();
        assert_eq!(env.forward_actions(&vec![]), vec![ActionId(0)]);
        assert_eq!(env.forward_actions(&vec![0]), vec![ActionId(6)]);
        let s = env.score(&[0]).unwrap();
        assert!((s.gc - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.cai, 1.0);
        assert_eq!(env.enumerate_states(100).unwrap().len(), 2);
    }

    #[test]
    fn incomplete_sequences_cannot_exit() {
        let env = CodonEnv::new("MKL", CodonWeights::default()).unwrap();
        assert!(matches!(
            env.codon_reward(&[0]),
            Err(EnvError::IncompleteSequence { len: 1, expected: 3 })
        ));
        assert!(env.log_reward(&vec![0, 1]).is_err());
        assert!(!env.can_exit(&vec![0, 1]));
        assert_eq!(env.forward_actions(&vec![0]).len(), 2);
        assert_eq!(env.forward_actions(&vec![0, 1]).len(), 6);
    }

    #[test]
    fn optimal_codons_give_unit_cai() {
        let env = CodonEnv::new("MKLSRGATVQ", CodonWeights::default()).unwrap();
        let best = env.optimal_choices();
        assert_eq!(env.score(&best).unwrap().cai, 1.0);
        assert_eq!(env.decode(&best).unwrap(), "MKLSRGATVQ");
    }

    #[test]
    fn gc_component_is_bounded_by_the_richest_choice() {
        let env = CodonEnv::new("GAP", CodonWeights::default()).unwrap();
        // G, A and P each have a GC-only codon.
        let gc_rich: Vec<u8> = (0..3)
            .map(|t| {
                env.synonyms(t)
                    .iter()
                    .position(|c| c.iter().all(|&b| b == b'G' || b == b'C'))
                    .unwrap() as u8
            })
            .collect();
        assert_eq!(env.score(&gc_rich).unwrap().gc, 1.0);
    }

    #[test]
    fn reward_combines_components() {
        let env = CodonEnv::new(
            "MKLSRGATVQ",
            CodonWeights {
                gc: 2.0,
                mfe: 0.5,
                cai: 3.0,
            },
        )
        .unwrap();
        let choice = vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 0];
        let s = env.score(&choice).unwrap();
        let dna = env.dna(&choice);
        assert_eq!(dna.len(), 30);
        assert_eq!(s.mfe, nussinov_mfe(&dna).unwrap());
        assert!((s.reward - (2.0 * s.gc - 0.5 * s.mfe + 3.0 * s.cai)).abs() < 1e-12);
    }

    #[test]
    fn encoding_layout() {
        let env = CodonEnv::new("MK", CodonWeights::default()).unwrap();
        // M: 1 codon + unset, K: 2 codons + unset.
        assert_eq!(env.feature_dim(), 5);
        assert_eq!(env.encode(&vec![]), vec![0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(env.encode(&vec![0, 1]), vec![1.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
