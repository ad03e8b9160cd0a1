//! Seeded evaluation sets and their manifests.

use serde::{Deserialize, Serialize};

use crate::chemistry::{sample_chemistry, ChemistryError, ChemistryRecord, GenConfig};
use crate::training::eval_seeds;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub index: usize,
    pub seed: u64,
    pub missing_edges: usize,
    pub chemistry: ChemistryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub format_version: u32,
    pub seed: u64,
    pub gen: GenConfig,
    pub episodes: Vec<EvalEpisode>,
}

impl EvalManifest {
    pub fn seeds(&self) -> Vec<u64> {
        self.episodes.iter().map(|e| e.seed).collect()
    }

    /// Number of episodes per missing-edge count, indexed by the count.
    pub fn missing_edge_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.gen.missing_edge_weights.len()];
        for e in &self.episodes {
            if e.missing_edges >= c.len() {
                c.resize(e.missing_edges + 1, 0);
            }
            c[e.missing_edges] += 1;
        }
        c
    }
}

/// `n` episode seeds derived from `seed`, the same ones evaluation uses,
/// with the chemistry each one draws.
pub fn generate_eval_set(seed: u64, n: usize, gen: &GenConfig) -> Result<EvalManifest, ChemistryError> {
    gen.missing_edge_probs()?;
    let episodes = eval_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(index, s)| {
            let chem = sample_chemistry(s, gen)?;
            Ok(EvalEpisode { index, seed: s, missing_edges: chem.edges.n_missing(), chemistry: chem.record() })
        })
        .collect::<Result<_, ChemistryError>>()?;
    Ok(EvalManifest { format_version: MANIFEST_VERSION, seed, gen: gen.clone(), episodes })
}
