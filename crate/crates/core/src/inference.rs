//! Posterior summaries and hypothesis tests computed from a trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{Trace, TraceDraw};
use crate::matrix::TransitionMatrix;
use crate::model::{Combinations, Factor};
use crate::partition::count_distinct;

fn check_levels(draw: &TraceDraw, x: &[usize]) -> Result<()> {
    if x.len() != draw.z.len() {
        return Err(Error::Dimension(format!(
            "{} predictor values given, the model has {}",
            x.len(),
            draw.z.len()
        )));
    }
    for (j, (&l, zj)) in x.iter().zip(&draw.z).enumerate() {
        if l >= zj.len() {
            return Err(Error::Data(format!("level {l} out of range for predictor {j}")));
        }
    }
    Ok(())
}

fn mix(weights: &[f64], first: &TransitionMatrix, second: &TransitionMatrix) -> TransitionMatrix {
    let d0 = first.dim();
    let mut out = TransitionMatrix::zeros(d0);
    for yp in 0..d0 {
        let w = weights[yp];
        for y in 0..d0 {
            out[(yp, y)] = w * first[(yp, y)] + (1.0 - w) * second[(yp, y)];
        }
    }
    out
}

/// Population-level rows `pi0 * lambda_fixed[z(x)] + (1 - pi0) * lambda0`.
pub fn population_transition(draw: &TraceDraw, x: &[usize]) -> Result<TransitionMatrix> {
    check_levels(draw, x)?;
    Ok(mix(&draw.pi0, &draw.lambda_fixed[draw.cluster_of(x)], &draw.lambda0))
}

/// Subject-level rows `pi0 * lambda_fixed[z(x)] + (1 - pi0) * lambda_rand[subject]`.
pub fn subject_transition(draw: &TraceDraw, subject: usize, x: &[usize]) -> Result<TransitionMatrix> {
    check_levels(draw, x)?;
    let rand = draw
        .lambda_rand
        .get(subject)
        .ok_or_else(|| Error::Data(format!("unknown subject index {subject}")))?;
    Ok(mix(&draw.pi0, &draw.lambda_fixed[draw.cluster_of(x)], rand))
}

/// Cellwise mean and standard deviation of a matrix-valued quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

/// Welford accumulator over `n x n` matrices.
struct CellMoments {
    n: usize,
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl CellMoments {
    fn new(n: usize) -> Self {
        CellMoments {
            n,
            count: 0.0,
            mean: vec![0.0; n * n],
            m2: vec![0.0; n * n],
        }
    }

    fn push(&mut self, values: impl IntoIterator<Item = f64>) {
        self.count += 1.0;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let d = x - *m;
            *m += d / self.count;
            *s += d * (x - *m);
        }
    }

    /// Population-style sd (divisor `n`), so a single draw has sd 0.
    fn finish(self) -> CellSummary {
        let n = self.n;
        let count = self.count;
        let rows = |v: Vec<f64>| v.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let sd = self.m2.iter().map(|s| (s / count).max(0.0).sqrt()).collect();
        CellSummary {
            mean: rows(self.mean),
            sd: rows(sd),
        }
    }
}

fn nonempty(trace: &Trace) -> Result<&TraceDraw> {
    trace
        .draws
        .first()
        .ok_or_else(|| Error::Data("trace has no retained draws".into()))
}

/// Posterior mean and sd of the population-level transition matrix at `x`.
pub fn posterior_transition_summary(trace: &Trace, x: &[usize]) -> Result<CellSummary> {
    let first = nonempty(trace)?;
    let mut acc = CellMoments::new(first.lambda0.dim());
    for draw in &trace.draws {
        acc.push(population_transition(draw, x)?.as_slice().iter().copied());
    }
    Ok(acc.finish())
}

/// Posterior of the number of occupied clusters of one predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalTest {
    pub predictor: String,
    /// `k_distribution[k - 1]` is the posterior mass on `k` occupied clusters.
    pub k_distribution: Vec<f64>,
    /// Posterior probability that the predictor matters (more than one cluster).
    pub p_h1: f64,
}

impl GlobalTest {
    /// Posterior mass on exactly `k` occupied clusters.
    pub fn prob_k(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.k_distribution.get(k - 1).copied().unwrap_or(0.0)
    }
}

pub fn global_test(trace: &Trace, j: usize, name: &str) -> Result<GlobalTest> {
    let first = nonempty(trace)?;
    let d = first
        .z
        .get(j)
        .ok_or_else(|| Error::Dimension(format!("no predictor with index {j}")))?
        .len();
    let mut hist = vec![0usize; d];
    for draw in &trace.draws {
        hist[count_distinct(&draw.z[j]) - 1] += 1;
    }
    let n = trace.len() as f64;
    let k_distribution: Vec<f64> = hist.iter().map(|&c| c as f64 / n).collect();
    let single = hist[0];
    Ok(GlobalTest {
        predictor: name.to_string(),
        k_distribution,
        p_h1: (trace.len() - single) as f64 / n,
    })
}

/// Cellwise comparison of two levels of one predictor with the others held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTest {
    pub predictor: usize,
    pub level_a: usize,
    pub level_b: usize,
    /// Full predictor vector; the entry of `predictor` is ignored.
    pub context: Vec<usize>,
    /// Posterior mean of `|P_a(y | y') - P_b(y | y')|`.
    pub mean_abs_diff: Vec<Vec<f64>>,
    /// Posterior probability that `|P_a - P_b| <= delta`.
    pub p_h0: Vec<Vec<f64>>,
}

pub fn local_test(trace: &Trace, j: usize, a: usize, b: usize, context: &[usize], delta: f64) -> Result<LocalTest> {
    let first = nonempty(trace)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if j >= first.z.len() {
        return Err(Error::Dimension(format!("no predictor with index {j}")));
    }
    let d0 = first.lambda0.dim();
    let (mut xa, mut xb) = (context.to_vec(), context.to_vec());
    check_levels(first, &xa)?;
    xa[j] = a;
    xb[j] = b;
    check_levels(first, &xa)?;
    check_levels(first, &xb)?;
    let mut sum = vec![0.0; d0 * d0];
    let mut null = vec![0usize; d0 * d0];
    for draw in &trace.draws {
        let pa = population_transition(draw, &xa)?;
        let pb = population_transition(draw, &xb)?;
        for (k, (x, y)) in pa.as_slice().iter().zip(pb.as_slice()).enumerate() {
            let diff = (x - y).abs();
            sum[k] += diff;
            if diff <= delta {
                null[k] += 1;
            }
        }
    }
    let n = trace.len() as f64;
    let grid = |v: Vec<f64>| v.chunks(d0).map(<[f64]>::to_vec).collect();
    Ok(LocalTest {
        predictor: j,
        level_a: a,
        level_b: b,
        context: context.to_vec(),
        mean_abs_diff: grid(sum.iter().map(|s| s / n).collect()),
        p_h0: grid(null.iter().map(|&c| c as f64 / n).collect()),
    })
}

/// Posterior sd of the random-effect contributions `(1 - pi0(y')) * lambda_rand[i](y | y')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsSummary {
    pub per_subject: Vec<Vec<Vec<f64>>>,
    /// Average of the per-subject matrices.
    pub pooled: Vec<Vec<f64>>,
}

pub fn random_effects_summary(trace: &Trace) -> Result<RandomEffectsSummary> {
    let first = nonempty(trace)?;
    let d0 = first.lambda0.dim();
    let subjects = first.lambda_rand.len();
    let mut acc: Vec<CellMoments> = (0..subjects).map(|_| CellMoments::new(d0)).collect();
    for draw in &trace.draws {
        for (m, lr) in acc.iter_mut().zip(&draw.lambda_rand) {
            m.push((0..d0 * d0).map(|k| (1.0 - draw.pi0[k / d0]) * lr.as_slice()[k]));
        }
    }
    let per_subject: Vec<Vec<Vec<f64>>> = acc.into_iter().map(|m| m.finish().sd).collect();
    let mut pooled = vec![vec![0.0; d0]; d0];
    for sd in &per_subject {
        for (p, s) in pooled.iter_mut().flatten().zip(sd.iter().flatten()) {
            *p += s / subjects as f64;
        }
    }
    Ok(RandomEffectsSummary { per_subject, pooled })
}

/// Prior variance of a Dirichlet cell: `c (1 - c) / (alpha + 1)`.
pub fn prior_variance_check(alpha: f64, cell: f64) -> f64 {
    if alpha.is_infinite() {
        return 0.0;
    }
    cell * (1.0 - cell) / (alpha + 1.0)
}

/// Prior correlations of one cell: between two cluster combinations for the same
/// subject, and between two subjects for the same cluster combination.
/// The pair sums to exactly one.
pub fn prior_correlation_check(pi0: f64, alpha0: f64, alpha_re: f64) -> (f64, f64) {
    let pi1 = 1.0 - pi0;
    let fixed = pi0 * pi0 / (alpha0 + 1.0);
    let rand = pi1 * pi1 / (alpha_re + 1.0);
    let total = fixed + rand;
    if rand >= fixed {
        let within = rand / total;
        (within, 1.0 - within)
    } else {
        let between = fixed / total;
        (1.0 - between, between)
    }
}

/// Global and local test results for a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub delta: f64,
    pub global: Vec<GlobalTest>,
    pub local: Vec<LocalTest>,
}

/// Runs the global test for every predictor and the local test for every pair of
/// levels of every predictor, at every combination of the other predictors.
pub fn test_report(trace: &Trace, factors: &[Factor], delta: f64) -> Result<TestReport> {
    let global = factors
        .iter()
        .enumerate()
        .map(|(j, f)| global_test(trace, j, &f.name))
        .collect::<Result<Vec<_>>>()?;
    let mut local = Vec::new();
    for (j, f) in factors.iter().enumerate() {
        let mut radices: Vec<usize> = factors.iter().map(Factor::len).collect();
        radices[j] = 1;
        let others = Combinations::new(radices);
        for c in 0..others.len() {
            let context = others.decode(c);
            for a in 0..f.len() {
                for b in a + 1..f.len() {
                    local.push(local_test(trace, j, a, b, &context, delta)?);
                }
            }
        }
    }
    Ok(TestReport { delta, global, local })
}

/// Posterior mean and sd of a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
}

impl ScalarSummary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for x in values {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        ScalarSummary {
            mean,
            sd: if n > 0.0 { (m2 / n).sqrt() } else { 0.0 },
        }
    }
}

/// Population-level transition summary of one predictor-level combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationSummary {
    pub levels: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummaries {
    pub draws: usize,
    /// Row and column labels of every matrix.
    pub states: Vec<String>,
    pub predictors: Vec<String>,
    pub transitions: Vec<CombinationSummary>,
    pub subjects: Vec<String>,
    pub random_effects: RandomEffectsSummary,
    pub pi0: Vec<ScalarSummary>,
    pub alpha0: ScalarSummary,
    pub alpha_re: ScalarSummary,
}

/// Summaries of every predictor-level combination plus the scalar parameters.
pub fn summarize(trace: &Trace, dataset: &crate::model::SequenceDataset) -> Result<PosteriorSummaries> {
    let first = nonempty(trace)?;
    let factors = dataset.factors();
    let combos = dataset.level_combinations();
    let transitions = (0..combos.len())
        .map(|c| {
            let x = combos.decode(c);
            let s = posterior_transition_summary(trace, &x)?;
            Ok(CombinationSummary {
                levels: x.iter().zip(factors).map(|(&l, f)| f.levels[l].clone()).collect(),
                mean: s.mean,
                sd: s.sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSummaries {
        draws: trace.len(),
        states: dataset.states().tokens().to_vec(),
        predictors: factors.iter().map(|f| f.name.clone()).collect(),
        transitions,
        subjects: dataset.subjects().to_vec(),
        random_effects: random_effects_summary(trace)?,
        pi0: (0..first.pi0.len())
            .map(|y| ScalarSummary::of(trace.draws.iter().map(|d| d.pi0[y])))
            .collect(),
        alpha0: ScalarSummary::of(trace.draws.iter().map(|d| d.alpha0)),
        alpha_re: ScalarSummary::of(trace.draws.iter().map(|d| d.alpha_re)),
    })
}
