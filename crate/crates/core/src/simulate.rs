//! Forward simulation from the mixed-effects model and the benchmark scenarios.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::categorical;
use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;
use crate::model::{Factor, Sequence, SequenceDataset, StateSpace};
use crate::rng::substream;

/// Row-sum tolerance for simulation inputs.
const ROW_TOL: f64 = 1e-9;
/// Singular values below this count as zero in the stationarity rank check.
const RANK_TOL: f64 = 1e-10;

/// Stationary distribution of an ergodic transition matrix.
///
/// Fails with [`Error::NotErgodic`] when `I - P` has a null space of dimension
/// above one, i.e. the stationary distribution is not unique.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    if !p.is_row_stochastic(ROW_TOL) || p.as_slice().iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("matrix is not row-stochastic".into()));
    }
    let n = p.dim();
    let a = DMatrix::from_fn(n, n, |i, j| p[(j, i)] - if i == j { 1.0 } else { 0.0 });
    let rank = a.clone().svd(false, false).rank(RANK_TOL);
    if rank + 1 < n {
        return Err(Error::NotErgodic(format!(
            "{} independent stationary distributions",
            n - rank
        )));
    }
    // Rows of P^T - I sum to zero, so one of them can be swapped for the normalization.
    let mut a = a;
    a.row_mut(n - 1).fill(1.0);
    let mut b = nalgebra::DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotErgodic("singular stationarity system".into()))?;
    let mut pi: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    Ok(pi)
}

/// Draws a chain of `length` tokens: the first from `initial`, then from the rows of `p`.
pub fn simulate_chain<R: Rng + ?Sized>(rng: &mut R, p: &TransitionMatrix, initial: &[f64], length: usize) -> Vec<usize> {
    let mut tokens = Vec::with_capacity(length);
    if length == 0 {
        return tokens;
    }
    let mut y = categorical(rng, initial);
    tokens.push(y);
    for _ in 1..length {
        y = categorical(rng, p.row(y));
        tokens.push(y);
    }
    tokens
}

/// One sequence to simulate: its labels and its subject-level transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub id: String,
    pub subject: usize,
    pub predictors: Vec<usize>,
    pub transition: TransitionMatrix,
    pub length: usize,
}

/// Simulates every sequence from its own substream of `seed`, starting from the
/// stationary distribution of its matrix (uniform if that is not unique).
pub fn simulate_sequences(
    states: StateSpace,
    factors: Vec<Factor>,
    subjects: Vec<String>,
    specs: &[SequenceSpec],
    seed: u64,
) -> Result<SequenceDataset> {
    let d0 = states.len();
    for s in specs {
        if s.length < 2 {
            return Err(Error::Data(format!("sequence {:?}: length must be >= 2", s.id)));
        }
        if s.transition.dim() != d0 {
            return Err(Error::Dimension(format!("sequence {:?}: matrix is not {d0} x {d0}", s.id)));
        }
        if !s.transition.is_row_stochastic(ROW_TOL) || s.transition.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::Domain(format!("sequence {:?}: matrix is not row-stochastic", s.id)));
        }
    }
    let sequences = specs
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let initial = stationary_distribution(&s.transition).unwrap_or_else(|_| vec![1.0 / d0 as f64; d0]);
            let mut rng = substream(seed, &[k as u64]);
            Sequence {
                id: s.id.clone(),
                subject: s.subject,
                predictors: s.predictors.clone(),
                tokens: simulate_chain(&mut rng, &s.transition, &initial, s.length),
            }
        })
        .collect();
    SequenceDataset::new(states, factors, subjects, sequences)
}

/// One subject of the benchmark design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub id: String,
    pub genotype: usize,
    /// Subject-level random-effect rows.
    pub lambda: TransitionMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub subject: usize,
    pub context: usize,
    pub length: usize,
}

/// Parameters of the two-predictor (genotype x context) benchmark design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub tokens: Vec<String>,
    pub genotypes: Vec<String>,
    pub contexts: Vec<String>,
    /// Fixed-effect rows indexed `[genotype][context]`.
    pub base: Vec<Vec<TransitionMatrix>>,
    /// Fixed-effect weight per conditioning state.
    pub pi0: Vec<f64>,
    pub subjects: Vec<SubjectParams>,
    /// Per-context shift added to the first genotype's rows to obtain the
    /// second genotype's rows in scenario F. Rows sum to zero.
    pub delta_f: Vec<Vec<Vec<f64>>>,
    pub sequences: Vec<SequencePlan>,
}

const PSEUDO_FOXP2: &str = include_str!("../fixtures/pseudo_foxp2.json");

impl ScenarioParams {
    /// The bundled five-token, 2 x 3 design with 14 subjects and 42 sequences.
    pub fn pseudo_foxp2() -> Self {
        Self::from_json(PSEUDO_FOXP2).expect("bundled fixture is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ScenarioParams =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("scenario parameters: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let d0 = self.tokens.len();
        let (g, c) = (self.genotypes.len(), self.contexts.len());
        let stochastic = |m: &TransitionMatrix| {
            m.dim() == d0 && m.is_row_stochastic(ROW_TOL) && m.as_slice().iter().all(|&x| x >= 0.0)
        };
        if self.base.len() != g || self.base.iter().any(|r| r.len() != c || !r.iter().all(stochastic)) {
            return Err(Error::Data("base must hold a stochastic matrix per genotype and context".into()));
        }
        if self.pi0.len() != d0 || self.pi0.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("pi0 must hold one weight in [0, 1] per token".into()));
        }
        for s in &self.subjects {
            if s.genotype >= g || !stochastic(&s.lambda) {
                return Err(Error::Data(format!("subject {:?} is invalid", s.id)));
            }
        }
        if self.delta_f.len() != c {
            return Err(Error::Data("delta_f must hold one matrix per context".into()));
        }
        for (ctx, delta) in self.delta_f.iter().enumerate() {
            if delta.len() != d0 || delta.iter().any(|r| r.len() != d0) {
                return Err(Error::Data("delta_f matrices must be d0 x d0".into()));
            }
            for (yp, row) in delta.iter().enumerate() {
                if row.iter().sum::<f64>().abs() > ROW_TOL {
                    return Err(Error::Data(format!("delta_f[{ctx}] row {yp} does not sum to zero")));
                }
                for (y, d) in row.iter().enumerate() {
                    if self.base[0][ctx][(yp, y)] + d < 0.0 {
                        return Err(Error::Data(format!("delta_f[{ctx}] leaves a negative cell")));
                    }
                }
            }
        }
        for p in &self.sequences {
            if p.subject >= self.subjects.len() || p.context >= c || p.length < 2 {
                return Err(Error::Data("sequence plan refers to an unknown subject or context".into()));
            }
        }
        Ok(())
    }

    pub fn factors(&self) -> Vec<Factor> {
        vec![
            Factor::new("genotype", self.genotypes.clone()).expect("distinct genotypes"),
            Factor::new("context", self.contexts.clone()).expect("distinct contexts"),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::A,
        ScenarioId::B,
        ScenarioId::C,
        ScenarioId::D,
        ScenarioId::E,
        ScenarioId::F,
    ];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ScenarioId::A),
            "B" => Ok(ScenarioId::B),
            "C" => Ok(ScenarioId::C),
            "D" => Ok(ScenarioId::D),
            "E" => Ok(ScenarioId::E),
            "F" => Ok(ScenarioId::F),
            other => Err(Error::Config(format!("unknown scenario {other:?}; expected one of A-F"))),
        }
    }
}

/// Generating values of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario: ScenarioId,
    /// Number of distinct fixed effects along each predictor (genotype, context).
    pub k_tilde: Vec<usize>,
    /// Fixed-effect rows actually used, `[genotype][context]`.
    pub lambda: Vec<Vec<TransitionMatrix>>,
    pub pi0: Vec<f64>,
    /// Population-level genotype difference per context,
    /// `pi0(y') * (lambda[0][c] - lambda[1][c])(y | y')`.
    pub delta_p: Vec<Vec<Vec<f64>>>,
}

impl ScenarioTruth {
    /// Whether the true genotype difference in `(context, y', y)` exceeds `delta`.
    pub fn differs(&self, context: usize, prev: usize, next: usize, delta: f64) -> bool {
        self.delta_p[context][prev][next].abs() > delta
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub dataset: SequenceDataset,
    pub truth: ScenarioTruth,
}

/// Number of distinct slices along one axis of a `[genotype][context]` grid.
fn distinct_along(lambda: &[Vec<TransitionMatrix>], genotype_axis: bool) -> usize {
    let slices: Vec<Vec<&TransitionMatrix>> = if genotype_axis {
        lambda.iter().map(|row| row.iter().collect()).collect()
    } else {
        (0..lambda[0].len()).map(|c| lambda.iter().map(|row| &row[c]).collect()).collect()
    };
    let mut distinct: Vec<&Vec<&TransitionMatrix>> = Vec::new();
    for s in &slices {
        if !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    distinct.len()
}

/// Fixed-effect grid of a scenario built from the base grid.
pub fn scenario_lambda(id: ScenarioId, params: &ScenarioParams) -> Vec<Vec<TransitionMatrix>> {
    let base = &params.base;
    let (ng, nc) = (params.genotypes.len(), params.contexts.len());
    (0..ng)
        .map(|g| {
            (0..nc)
                .map(|c| match id {
                    ScenarioId::A => base[0][0].clone(),
                    ScenarioId::B => base[g][0].clone(),
                    ScenarioId::C => base[0][c].clone(),
                    ScenarioId::D => base[g][c].clone(),
                    ScenarioId::E => base[g][c.min(1)].clone(),
                    ScenarioId::F if g == 0 => base[0][c].clone(),
                    ScenarioId::F => {
                        let mut m = base[0][c].clone();
                        for (yp, row) in params.delta_f[c].iter().enumerate() {
                            for (cell, d) in m.row_mut(yp).iter_mut().zip(row) {
                                *cell += d;
                            }
                        }
                        m
                    }
                })
                .collect()
        })
        .collect()
}

/// Simulates one scenario of the benchmark design together with its truth.
pub fn build_scenario(id: ScenarioId, params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let d0 = params.tokens.len();
    let lambda = scenario_lambda(id, params);
    let specs: Vec<SequenceSpec> = params
        .sequences
        .iter()
        .enumerate()
        .map(|(k, plan)| {
            let subject = &params.subjects[plan.subject];
            let fixed = &lambda[subject.genotype][plan.context];
            let mut p = TransitionMatrix::zeros(d0);
            for yp in 0..d0 {
                let w = params.pi0[yp];
                for y in 0..d0 {
                    p[(yp, y)] = w * fixed[(yp, y)] + (1.0 - w) * subject.lambda[(yp, y)];
                }
            }
            SequenceSpec {
                id: format!("{}-{}-{}", subject.id, params.contexts[plan.context], k + 1),
                subject: plan.subject,
                predictors: vec![subject.genotype, plan.context],
                transition: p,
                length: plan.length,
            }
        })
        .collect();
    let dataset = simulate_sequences(
        StateSpace::new(params.tokens.clone())?,
        params.factors(),
        params.subjects.iter().map(|s| s.id.clone()).collect(),
        &specs,
        seed,
    )?;
    let delta_p = (0..params.contexts.len())
        .map(|c| {
            (0..d0)
                .map(|yp| {
                    (0..d0)
                        .map(|y| params.pi0[yp] * (lambda[0][c][(yp, y)] - lambda[1][c][(yp, y)]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let truth = ScenarioTruth {
        scenario: id,
        k_tilde: vec![distinct_along(&lambda, true), distinct_along(&lambda, false)],
        lambda,
        pi0: params.pi0.clone(),
        delta_p,
    };
    Ok(Scenario { dataset, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{empirical_transition_rows, Slice};
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn tm(rows: Vec<Vec<f64>>) -> TransitionMatrix {
        TransitionMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn stationary_examples() {
        let q = vec![0.2, 0.5, 0.3];
        let pi = stationary_distribution(&TransitionMatrix::from_repeated_row(&q)).unwrap();
        for (a, b) in pi.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        let mixture = tm(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let pi = stationary_distribution(&mixture).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
        assert!(matches!(
            stationary_distribution(&TransitionMatrix::identity(3)),
            Err(Error::NotErgodic(_))
        ));
        assert!(stationary_distribution(&tm(vec![vec![0.5, 0.6], vec![0.5, 0.5]])).is_err());
    }

    #[test]
    fn stationary_solves_balance() {
        let p = tm(vec![vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2], vec![0.5, 0.1, 0.4]]);
        let pi = stationary_distribution(&p).unwrap();
        for y in 0..3 {
            let flow: f64 = (0..3).map(|x| pi[x] * p[(x, y)]).sum();
            assert!((flow - pi[y]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_rows_give_forced_orbit() {
        let p = tm(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        let tokens = simulate_chain(&mut seeded(0), &p, &[1.0, 0.0, 0.0], 7);
        assert_eq!(tokens, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    fn single_sequence(p: TransitionMatrix, length: usize, seed: u64) -> SequenceDataset {
        let d0 = p.dim();
        let tokens: Vec<String> = (0..d0).map(|i| format!("t{i}")).collect();
        simulate_sequences(
            StateSpace::new(tokens).unwrap(),
            vec![],
            vec!["s".into()],
            &[SequenceSpec {
                id: "1".into(),
                subject: 0,
                predictors: vec![],
                transition: p,
                length,
            }],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn iid_rows_frequencies_converge() {
        let q = vec![0.1, 0.6, 0.3];
        let ds = single_sequence(TransitionMatrix::from_repeated_row(&q), 100_000, 3);
        let mut freq = [0.0; 3];
        for &t in &ds.sequences()[0].tokens {
            freq[t] += 1e-5;
        }
        for (f, p) in freq.iter().zip(&q) {
            assert!((f - p).abs() < 0.01);
        }
    }

    #[test]
    fn transition_mle_is_consistent() {
        let p = tm(vec![vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2], vec![0.5, 0.1, 0.4]]);
        let ds = single_sequence(p.clone(), 100_000, 4);
        let mle = empirical_transition_rows(&ds, &Slice::All, &[1.0 / 3.0; 3]);
        assert!(mle.max_abs_diff(&p) < 0.01);
        assert_eq!(ds, single_sequence(p, 100_000, 4));
    }

    #[test]
    fn simulation_rejects_bad_input() {
        let states = StateSpace::new(["a", "b"]).unwrap();
        let bad = SequenceSpec {
            id: "1".into(),
            subject: 0,
            predictors: vec![],
            transition: tm(vec![vec![0.5, 0.4], vec![0.5, 0.5]]),
            length: 10,
        };
        assert!(simulate_sequences(states.clone(), vec![], vec!["s".into()], std::slice::from_ref(&bad), 0).is_err());
        let short = SequenceSpec {
            transition: TransitionMatrix::identity(2),
            length: 1,
            ..bad
        };
        assert!(simulate_sequences(states, vec![], vec!["s".into()], &[short], 0).is_err());
    }

    #[test]
    fn fixture_shape() {
        let p = ScenarioParams::pseudo_foxp2();
        assert_eq!(p.tokens, ["d", "m", "s", "u", "x"]);
        assert_eq!(p.subjects.iter().filter(|s| s.genotype == 0).count(), 8);
        assert_eq!(p.subjects.iter().filter(|s| s.genotype == 1).count(), 6);
        assert_eq!(p.contexts.len(), 3);
        assert_eq!(p.sequences.len(), 42);
        assert!(p.sequences.iter().all(|s| (600..=6000).contains(&s.length)));
        assert!(p.pi0.iter().all(|&w| (0.75..=0.85).contains(&w)));
        for (c, delta) in p.delta_f.iter().enumerate() {
            let nonzero: Vec<f64> = delta.iter().flatten().filter(|d| **d != 0.0).map(|d| d.abs()).collect();
            assert_eq!(nonzero.len(), 6, "context {c}");
            assert!(nonzero.iter().all(|&d| (0.05 - 1e-12..=0.15 + 1e-12).contains(&d)));
        }
    }

    #[test]
    fn scenario_tying_patterns() {
        let p = ScenarioParams::pseudo_foxp2();
        let a = scenario_lambda(ScenarioId::A, &p);
        assert!(a.iter().flatten().all(|m| *m == p.base[0][0]));
        let e = scenario_lambda(ScenarioId::E, &p);
        for g in 0..2 {
            assert_eq!(e[g][2], p.base[g][1]);
            assert_eq!(e[g][0], p.base[g][0]);
        }
        let f = scenario_lambda(ScenarioId::F, &p);
        for c in 0..3 {
            assert_eq!(f[0][c], p.base[0][c]);
            for yp in 0..5 {
                for y in 0..5 {
                    let diff = f[1][c][(yp, y)] - f[0][c][(yp, y)];
                    if p.delta_f[c][yp][y] == 0.0 {
                        assert_eq!(diff, 0.0);
                    } else {
                        assert!((diff - p.delta_f[c][yp][y]).abs() < 1e-15);
                    }
                }
            }
            assert!(f[1][c].is_row_stochastic(1e-12));
        }
    }

    #[test]
    fn scenario_truth_counts() {
        let p = ScenarioParams::pseudo_foxp2();
        let expected = [
            (ScenarioId::A, [1, 1]),
            (ScenarioId::B, [2, 1]),
            (ScenarioId::C, [1, 3]),
            (ScenarioId::D, [2, 3]),
            (ScenarioId::E, [2, 2]),
            (ScenarioId::F, [2, 3]),
        ];
        for (id, k) in expected {
            let lambda = scenario_lambda(id, &p);
            assert_eq!(
                [distinct_along(&lambda, true), distinct_along(&lambda, false)],
                k,
                "scenario {id}"
            );
        }
    }

    #[test]
    fn scenario_build_is_reproducible() {
        let p = ScenarioParams::pseudo_foxp2();
        let a = build_scenario(ScenarioId::F, &p, 1).unwrap();
        let b = build_scenario(ScenarioId::F, &p, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.len(), 42);
        assert_eq!(a.truth.k_tilde, vec![2, 3]);
        let nonzero = a.truth.delta_p.iter().flatten().flatten().filter(|d| **d != 0.0).count();
        assert_eq!(nonzero, 18);
        assert!("f".parse::<ScenarioId>().is_ok() && "G".parse::<ScenarioId>().is_err());
    }

    proptest! {
        #[test]
        fn subject_matrices_are_stochastic(w in proptest::collection::vec(0.0f64..=1.0, 5)) {
            let mut p = ScenarioParams::pseudo_foxp2();
            p.pi0 = w;
            for id in ScenarioId::ALL {
                let lambda = scenario_lambda(id, &p);
                for s in &p.subjects {
                    for ctx in 0..3 {
                        let fixed = &lambda[s.genotype][ctx];
                        let mut m = TransitionMatrix::zeros(5);
                        for yp in 0..5 {
                            for y in 0..5 {
                                m[(yp, y)] = p.pi0[yp] * fixed[(yp, y)] + (1.0 - p.pi0[yp]) * s.lambda[(yp, y)];
                            }
                        }
                        prop_assert!(m.is_row_stochastic(1e-12));
                    }
                }
            }
        }
    }
}
