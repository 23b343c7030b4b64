use serde::{Deserialize, Serialize};

use super::{Combinations, ModelState, SequenceDataset};
use crate::error::{Error, Result};

/// Transition counts split by mixture indicator.
///
/// Every count block is a flattened `d0 x d0` array indexed `[prev * d0 + next]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub d0: usize,
    /// Fixed-effect (`v = 0`) counts per cluster combination.
    pub n_fixed: Vec<Vec<u64>>,
    /// Subject-effect (`v = 1`) counts per subject.
    pub n_rand: Vec<Vec<u64>>,
    /// Fixed-effect counts per observed level combination; `n_fixed` is this
    /// array summed under the current labeling `z`.
    pub n_level: Vec<Vec<u64>>,
    /// `n_v[prev][v]`: indicator totals per conditioning state.
    pub n_v: Vec<[u64; 2]>,
}

impl TransitionCounts {
    pub fn empty(d0: usize, clusters: usize, subjects: usize, levels: usize) -> Self {
        let block = || vec![0u64; d0 * d0];
        TransitionCounts {
            d0,
            n_fixed: (0..clusters).map(|_| block()).collect(),
            n_rand: (0..subjects).map(|_| block()).collect(),
            n_level: (0..levels).map(|_| block()).collect(),
            n_v: vec![[0; 2]; d0],
        }
    }

    /// Total count over both fixed and subject blocks.
    pub fn total(&self) -> u64 {
        let f: u64 = self.n_fixed.iter().flatten().sum();
        let r: u64 = self.n_rand.iter().flatten().sum();
        f + r
    }

    /// Rebuilds `n_fixed` from `n_level` for the labeling `z`.
    pub fn aggregate_fixed(&mut self, levels: &Combinations, z: &[Vec<usize>], clusters: &Combinations) {
        crate::gibbs::aggregate_into(levels, &self.n_level, z, clusters, &mut self.n_fixed);
    }
}

/// Tallies transitions by indicator, cluster combination and subject.
///
/// The first token of each sequence only conditions the second and contributes no
/// transition of its own.
pub fn count_transitions(dataset: &SequenceDataset, state: &ModelState) -> Result<TransitionCounts> {
    let d0 = dataset.d0();
    if state.v.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "state has indicators for {} sequences, dataset has {}",
            state.v.len(),
            dataset.len()
        )));
    }
    if state.z.len() != dataset.factors().len() {
        return Err(Error::Dimension(format!(
            "state has labels for {} predictors, dataset has {}",
            state.z.len(),
            dataset.factors().len()
        )));
    }
    for (f, zj) in dataset.factors().iter().zip(&state.z) {
        if zj.len() != f.len() {
            return Err(Error::Dimension(format!(
                "predictor {:?}: {} labels for {} levels",
                f.name,
                zj.len(),
                f.len()
            )));
        }
    }
    let levels = dataset.level_combinations();
    let clusters = state.cluster_combinations();
    if state.lambda_fixed.len() != clusters.len() || state.lambda_rand.len() != dataset.subjects().len() {
        return Err(Error::Dimension("lambda arrays do not match the model layout".into()));
    }
    let mut counts = TransitionCounts::empty(d0, clusters.len(), dataset.subjects().len(), levels.len());
    for (seq, v) in dataset.sequences().iter().zip(&state.v) {
        if v.len() != seq.transitions() {
            return Err(Error::Dimension(format!(
                "sequence {:?}: {} indicators for {} transitions",
                seq.id,
                v.len(),
                seq.transitions()
            )));
        }
        let level = levels.encode(&seq.predictors);
        for (w, &flag) in seq.tokens.windows(2).zip(v) {
            let cell = w[0] * d0 + w[1];
            if flag {
                counts.n_rand[seq.subject][cell] += 1;
            } else {
                counts.n_level[level][cell] += 1;
            }
            counts.n_v[w[0]][flag as usize] += 1;
        }
    }
    counts.aggregate_fixed(&levels, &state.z, &clusters);
    Ok(counts)
}
