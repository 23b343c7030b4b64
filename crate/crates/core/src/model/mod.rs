//! Data model shared by the sampler and the inference layer.
//!
//! Indices are zero-based throughout: token `y` is in `0..d0`, predictor level `l`
//! is in `0..d_j`, and cluster labels `h` are in `0..k_j`.

mod counts;
mod empirical;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use counts::{count_transitions, TransitionCounts};
pub use empirical::{empirical_marginal, empirical_transition_rows, Slice, LAMBDA00_FLOOR};

use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;
use crate::partition;

/// Ordered vocabulary of sequence tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StateSpace {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::Config(format!(
                "state space needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate token label {t:?}")));
            }
        }
        Ok(StateSpace { tokens, index })
    }

    /// Number of states, `d0`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.tokens[i]
    }
}

impl TryFrom<Vec<String>> for StateSpace {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        StateSpace::new(v)
    }
}

impl From<StateSpace> for Vec<String> {
    fn from(s: StateSpace) -> Self {
        s.tokens
    }
}

/// A categorical predictor observed once per sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Result<Self> {
        let name = name.into();
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        if levels.is_empty() {
            return Err(Error::Config(format!("predictor {name:?} has no levels")));
        }
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].contains(l) {
                return Err(Error::Config(format!(
                    "predictor {name:?} has duplicate level {l:?}"
                )));
            }
        }
        Ok(Factor { name, levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

/// Prior settings for one predictor's partition of levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorPrior {
    pub name: String,
    /// Number of observed levels, `d_j`.
    pub levels: usize,
    /// Latent cluster budget, `k_j`.
    pub clusters: usize,
    /// Symmetric Dirichlet concentration of the cluster weights, `alpha_j`.
    pub alpha: f64,
}

/// Partition-prior settings for all predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub predictors: Vec<PredictorPrior>,
}

impl PredictorSpec {
    /// Default settings: `k_j = d_j` and `alpha_j` chosen so that the prior
    /// probability of the single-cluster model is `null_target`.
    pub fn calibrated(factors: &[Factor], null_target: f64) -> Self {
        let predictors = factors
            .iter()
            .map(|f| {
                let d = f.len();
                let alpha = if d >= 2 {
                    partition::calibrate_alpha(d, d, null_target).alpha
                } else {
                    1.0
                };
                PredictorPrior {
                    name: f.name.clone(),
                    levels: d,
                    clusters: d,
                    alpha,
                }
            })
            .collect();
        PredictorSpec { predictors }
    }

    pub fn validate(&self, factors: &[Factor]) -> Result<()> {
        if self.predictors.len() != factors.len() {
            return Err(Error::Config(format!(
                "predictor spec has {} entries but the data has {} predictors",
                self.predictors.len(),
                factors.len()
            )));
        }
        for (p, f) in self.predictors.iter().zip(factors) {
            if p.levels != f.len() {
                return Err(Error::Config(format!(
                    "predictor {:?}: spec says {} levels, data has {}",
                    p.name,
                    p.levels,
                    f.len()
                )));
            }
            if p.clusters == 0 {
                return Err(Error::Config(format!("predictor {:?}: k_j must be >= 1", p.name)));
            }
            if !(p.alpha > 0.0 && p.alpha.is_finite()) {
                return Err(Error::Config(format!("predictor {:?}: alpha_j must be > 0", p.name)));
            }
        }
        Ok(())
    }

    pub fn cluster_radices(&self) -> Vec<usize> {
        self.predictors.iter().map(|p| p.clusters).collect()
    }
}

/// Mixed-radix indexing of predictor (or cluster) combinations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Combinations {
    radices: Vec<usize>,
    len: usize,
}

impl Combinations {
    pub fn new(radices: Vec<usize>) -> Self {
        let len = radices.iter().product();
        Combinations { radices, len }
    }

    /// Number of combinations (1 when there are no predictors).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    #[inline]
    pub fn encode(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.radices)
            .fold(0, |acc, (&d, &r)| acc * r + d)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.radices.len()];
        for (d, &r) in digits.iter_mut().zip(&self.radices).rev() {
            *d = index % r;
            index /= r;
        }
        digits
    }
}

/// One observed categorical sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: String,
    /// Index into [`SequenceDataset::subjects`].
    pub subject: usize,
    /// One level index per predictor.
    pub predictors: Vec<usize>,
    pub tokens: Vec<usize>,
}

impl Sequence {
    pub fn transitions(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }
}

/// A validated collection of sequences with their predictors and subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    states: StateSpace,
    factors: Vec<Factor>,
    subjects: Vec<String>,
    sequences: Vec<Sequence>,
}

impl SequenceDataset {
    /// Builds a dataset, checking every index against the declared vocabularies.
    ///
    /// An empty `sequences` list is allowed; it describes a data-free model.
    pub fn new(
        states: StateSpace,
        factors: Vec<Factor>,
        subjects: Vec<String>,
        sequences: Vec<Sequence>,
    ) -> Result<Self> {
        for (i, s) in subjects.iter().enumerate() {
            if subjects[..i].contains(s) {
                return Err(Error::Data(format!("duplicate subject id {s:?}")));
            }
        }
        let d0 = states.len();
        for seq in &sequences {
            if seq.tokens.len() < 2 {
                return Err(Error::Data(format!(
                    "sequence {:?} has {} tokens; at least 2 are required",
                    seq.id,
                    seq.tokens.len()
                )));
            }
            if let Some(&t) = seq.tokens.iter().find(|&&t| t >= d0) {
                return Err(Error::Data(format!(
                    "sequence {:?}: token index {t} out of range 0..{d0}",
                    seq.id
                )));
            }
            if seq.predictors.len() != factors.len() {
                return Err(Error::Data(format!(
                    "sequence {:?} has {} predictor values, expected {}",
                    seq.id,
                    seq.predictors.len(),
                    factors.len()
                )));
            }
            for (f, &l) in factors.iter().zip(&seq.predictors) {
                if l >= f.len() {
                    return Err(Error::Data(format!(
                        "sequence {:?}: level {l} out of range for predictor {:?}",
                        seq.id, f.name
                    )));
                }
            }
            if seq.subject >= subjects.len() {
                return Err(Error::Data(format!(
                    "sequence {:?}: subject index {} out of range",
                    seq.id, seq.subject
                )));
            }
        }
        Ok(SequenceDataset {
            states,
            factors,
            subjects,
            sequences,
        })
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn d0(&self) -> usize {
        self.states.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    /// Number of sequences, `s0`.
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_transitions(&self) -> usize {
        self.sequences.iter().map(Sequence::transitions).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Indexing of observed level combinations.
    pub fn level_combinations(&self) -> Combinations {
        Combinations::new(self.factors.iter().map(Factor::len).collect())
    }
}

/// Fixed prior constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha00: f64,
    pub lambda00: Vec<f64>,
    /// Beta shapes for the fixed-effect weight `pi0`.
    pub a0: f64,
    pub a1: f64,
    /// Gamma shape and rate for `alpha0`.
    pub a_alpha0: f64,
    pub b_alpha0: f64,
    /// Gamma shape and rate for the random-effects concentration.
    pub a_alpha_re: f64,
    pub b_alpha_re: f64,
    /// Local-test threshold on the probability scale.
    pub delta: f64,
}

impl Hyperparams {
    /// Defaults with a caller-supplied base distribution `lambda00`.
    pub fn with_lambda00(lambda00: Vec<f64>) -> Self {
        Hyperparams {
            alpha00: 1.0,
            lambda00,
            a0: 1.0,
            a1: 1.0,
            a_alpha0: 1.0,
            b_alpha0: 1.0,
            a_alpha_re: 1.0,
            b_alpha_re: 1.0,
            delta: 0.02,
        }
    }

    /// Defaults with `lambda00` set to the pooled token frequencies of `dataset`.
    pub fn from_dataset(dataset: &SequenceDataset) -> Result<Self> {
        Ok(Self::with_lambda00(empirical_marginal(dataset)?))
    }

    pub fn validate(&self, d0: usize) -> Result<()> {
        if self.lambda00.len() != d0 {
            return Err(Error::Config(format!(
                "lambda00 has length {} but there are {d0} states",
                self.lambda00.len()
            )));
        }
        if self.lambda00.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("lambda00 entries must be strictly positive".into()));
        }
        let s: f64 = self.lambda00.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("lambda00 sums to {s}, not 1")));
        }
        let positive = [
            ("alpha00", self.alpha00),
            ("a0", self.a0),
            ("a1", self.a1),
            ("a_alpha0", self.a_alpha0),
            ("b_alpha0", self.b_alpha0),
            ("a_alpha_re", self.a_alpha_re),
            ("b_alpha_re", self.b_alpha_re),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Complete configuration of the latent quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `z[j][l]`: cluster label of level `l` of predictor `j`.
    pub z: Vec<Vec<usize>>,
    /// Cluster weights per predictor, length `k_j`.
    pub pi_cluster: Vec<Vec<f64>>,
    /// `v[s][t]` for the transition into token `t + 1` of sequence `s`;
    /// `false` routes it to the fixed effect, `true` to the subject effect.
    pub v: Vec<Vec<bool>>,
    /// Fixed-effect weight per conditioning state; the subject weight is `1 - pi0`.
    pub pi0: Vec<f64>,
    pub lambda0: TransitionMatrix,
    /// Indexed by cluster combination (see [`ModelState::cluster_combinations`]).
    pub lambda_fixed: Vec<TransitionMatrix>,
    /// Indexed by subject.
    pub lambda_rand: Vec<TransitionMatrix>,
    pub alpha0: f64,
    pub alpha_re: f64,
}

impl ModelState {
    pub fn cluster_combinations(&self) -> Combinations {
        Combinations::new(self.pi_cluster.iter().map(Vec::len).collect())
    }

    /// Cluster combination that the predictor values `x` map to under `z`.
    pub fn cluster_of(&self, x: &[usize]) -> usize {
        let combos = self.cluster_combinations();
        let digits: Vec<usize> = x.iter().zip(&self.z).map(|(&l, zj)| zj[l]).collect();
        combos.encode(&digits)
    }

    /// Number of occupied clusters of predictor `j`.
    pub fn occupied_clusters(&self, j: usize) -> usize {
        partition::count_distinct(&self.z[j])
    }

    /// Checks the state invariants, returning a description of the first violation.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let stochastic = |m: &TransitionMatrix, what: &str| {
            if m.is_row_stochastic(tol) {
                Ok(())
            } else {
                Err(format!("{what} is not row-stochastic (error {})", m.max_row_sum_error()))
            }
        };
        stochastic(&self.lambda0, "lambda0")?;
        for (h, m) in self.lambda_fixed.iter().enumerate() {
            stochastic(m, &format!("lambda_fixed[{h}]"))?;
        }
        for (i, m) in self.lambda_rand.iter().enumerate() {
            stochastic(m, &format!("lambda_rand[{i}]"))?;
        }
        for (j, w) in self.pi_cluster.iter().enumerate() {
            let s: f64 = w.iter().sum();
            if w.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > tol {
                return Err(format!("pi_cluster[{j}] is not a probability vector"));
            }
            if self.z[j].iter().any(|&h| h >= w.len()) {
                return Err(format!("z[{j}] has a label outside 0..{}", w.len()));
            }
        }
        if self.pi0.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err("pi0 outside [0, 1]".into());
        }
        Ok(())
    }
}
