use super::SequenceDataset;
use crate::error::{Error, Result};
use crate::matrix::{floor_and_normalize, TransitionMatrix};

/// Floor applied to the pooled token frequencies so the base measure stays positive.
pub const LAMBDA00_FLOOR: f64 = 1e-6;

/// Pooled token frequencies over every position of every sequence.
///
/// Entries are floored at [`LAMBDA00_FLOOR`] and renormalized when a state never occurs.
pub fn empirical_marginal(dataset: &SequenceDataset) -> Result<Vec<f64>> {
    let total = dataset.total_tokens();
    if total == 0 {
        return Err(Error::Data("cannot compute token frequencies of an empty dataset".into()));
    }
    let mut freq = vec![0u64; dataset.d0()];
    for seq in dataset.sequences() {
        for &t in &seq.tokens {
            freq[t] += 1;
        }
    }
    let mut p: Vec<f64> = freq.iter().map(|&c| c as f64 / total as f64).collect();
    if p.iter().any(|&x| x < LAMBDA00_FLOOR) {
        floor_and_normalize(&mut p, LAMBDA00_FLOOR);
    }
    Ok(p)
}

/// Subset of sequences over which transitions are pooled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slice<'a> {
    All,
    /// Sequences whose predictor values equal the given levels.
    Levels(&'a [usize]),
    /// Sequences whose labeled predictor values (`z[j][x_j]`) equal the given clusters.
    Clusters { z: &'a [Vec<usize>], clusters: &'a [usize] },
    Subject(usize),
}

impl Slice<'_> {
    fn contains(&self, predictors: &[usize], subject: usize) -> bool {
        match self {
            Slice::All => true,
            Slice::Levels(levels) => predictors == *levels,
            Slice::Clusters { z, clusters } => predictors
                .iter()
                .zip(z.iter())
                .zip(clusters.iter())
                .all(|((&l, zj), &h)| zj[l] == h),
            Slice::Subject(i) => subject == *i,
        }
    }
}

/// Maximum-likelihood transition rows over a slice of the data.
///
/// Rows whose conditioning state never occurs in the slice are set to `fallback`.
pub fn empirical_transition_rows(dataset: &SequenceDataset, slice: &Slice<'_>, fallback: &[f64]) -> TransitionMatrix {
    let d0 = dataset.d0();
    let mut counts = TransitionMatrix::zeros(d0);
    for seq in dataset.sequences() {
        if !slice.contains(&seq.predictors, seq.subject) {
            continue;
        }
        for w in seq.tokens.windows(2) {
            counts[(w[0], w[1])] += 1.0;
        }
    }
    for y in 0..d0 {
        let row = counts.row_mut(y);
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row.iter_mut().for_each(|c| *c /= n);
        } else {
            row.copy_from_slice(fallback);
        }
    }
    counts
}
