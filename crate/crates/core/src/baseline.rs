//! Per-sequence comparator pipeline: transition proportions estimated per
//! sequence, rank-sum tests per cell, BH adjustment and a permutation global test.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{Combinations, SequenceDataset};
use crate::rng::substream;

/// Combined sample size up to which the rank-sum p-value is computed exactly.
pub const EXACT_RANK_SUM_MAX: usize = 12;

/// Transition proportions of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEstimate {
    pub id: String,
    pub subject: usize,
    pub predictors: Vec<usize>,
    /// Row `y'` holds the observed proportions, or zeros if `y'` never occurs
    /// as a conditioning state.
    pub rows: Vec<Vec<f64>>,
    pub visited: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerSequenceEstimates {
    pub d0: usize,
    /// Number of levels of each predictor.
    pub levels: Vec<usize>,
    pub subjects: usize,
    pub sequences: Vec<SequenceEstimate>,
}

pub fn per_sequence_mle(dataset: &SequenceDataset) -> PerSequenceEstimates {
    let d0 = dataset.d0();
    let sequences = dataset
        .sequences()
        .iter()
        .map(|seq| {
            let mut counts = vec![vec![0u64; d0]; d0];
            for w in seq.tokens.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
            let visited: Vec<bool> = counts.iter().map(|r| r.iter().any(|&c| c > 0)).collect();
            let rows = counts
                .iter()
                .map(|r| {
                    let n: u64 = r.iter().sum();
                    r.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
                })
                .collect();
            SequenceEstimate {
                id: seq.id.clone(),
                subject: seq.subject,
                predictors: seq.predictors.clone(),
                rows,
                visited,
            }
        })
        .collect();
    PerSequenceEstimates {
        d0,
        levels: dataset.factors().iter().map(|f| f.len()).collect(),
        subjects: dataset.subjects().len(),
        sequences,
    }
}

/// Midranks (1-based) of the pooled sample.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("rank-sum test needs two non-empty groups".into()));
    }
    Ok(())
}

/// Two-sided rank-sum p-value by enumerating every split of the pooled midranks.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let (n, total) = (a.len(), pooled.len());
    let expected = n as f64 * (total + 1) as f64 / 2.0;
    let observed = (ranks[..n].iter().sum::<f64>() - expected).abs();
    // Midranks are multiples of 1/2, so sums compare exactly after doubling.
    let tol = 1e-9;
    let (mut extreme, mut count) = (0u64, 0u64);
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let w: f64 = pick.iter().map(|&i| ranks[i]).sum();
        count += 1;
        if (w - expected).abs() >= observed - tol {
            extreme += 1;
        }
        // Next n-subset of 0..total in lexicographic order.
        let mut i = n;
        while i > 0 && pick[i - 1] == total - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        pick[i - 1] += 1;
        for k in i..n {
            pick[k] = pick[k - 1] + 1;
        }
    }
    Ok(extreme as f64 / count as f64)
}

/// Two-sided rank-sum p-value from the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let w: f64 = ranks[..a.len()].iter().sum();
    let mean = n * (total + 1.0) / 2.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&x| x == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = n * m / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let dev = ((w - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Two-sided Wilcoxon-Mann-Whitney p-value: exact for a combined size up to
/// [`EXACT_RANK_SUM_MAX`], normal approximation above.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() + b.len() <= EXACT_RANK_SUM_MAX {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvalues[i] * m as f64 / (rank + 1) as f64);
        // max() guards against p * m / m rounding below p.
        adjusted[i] = running.min(1.0).max(pvalues[i]);
    }
    adjusted
}

/// Lower bound on the posterior probability of the null implied by a p-value:
/// `1 / (1 + 1 / (-e p ln p))` for `p < 1/e`, and 1/2 otherwise.
pub fn calibrate_pvalue(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("p-value must lie in (0, 1], got {p}")));
    }
    if p < (-1.0f64).exp() {
        let b = -std::f64::consts::E * p * p.ln();
        Ok(1.0 / (1.0 + 1.0 / b))
    } else {
        Ok(0.5)
    }
}

/// Rank-sum tests of every cell between two levels of one predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineLocal {
    pub predictor: usize,
    pub level_a: usize,
    pub level_b: usize,
    /// Full predictor vector; the entry of `predictor` is ignored.
    pub context: Vec<usize>,
    pub p_raw: Vec<Vec<f64>>,
    /// BH-adjusted over the cells of this comparison.
    pub p_adjusted: Vec<Vec<f64>>,
}

/// Raw per-cell p-values for one comparison, with `labels[s]` the level of the
/// tested predictor for sequence `s`. Cells with an empty group get p = 1.
fn family_pvalues(est: &PerSequenceEstimates, labels: &[usize], j: usize, a: usize, b: usize, context: &[usize]) -> Vec<f64> {
    let d0 = est.d0;
    let matches = |s: &SequenceEstimate| {
        s.predictors
            .iter()
            .enumerate()
            .all(|(k, &l)| k == j || l == context[k])
    };
    let mut out = vec![1.0; d0 * d0];
    for yp in 0..d0 {
        let pick = |level: usize| -> Vec<&SequenceEstimate> {
            est.sequences
                .iter()
                .zip(labels)
                .filter(|(s, &l)| l == level && s.visited[yp] && matches(s))
                .map(|(s, _)| s)
                .collect()
        };
        let (ga, gb) = (pick(a), pick(b));
        if ga.is_empty() || gb.is_empty() {
            continue;
        }
        for y in 0..d0 {
            let xa: Vec<f64> = ga.iter().map(|s| s.rows[yp][y]).collect();
            let xb: Vec<f64> = gb.iter().map(|s| s.rows[yp][y]).collect();
            out[yp * d0 + y] = wilcoxon_rank_sum(&xa, &xb).expect("groups are non-empty");
        }
    }
    out
}

fn comparisons(est: &PerSequenceEstimates, j: usize) -> Vec<(usize, usize, Vec<usize>)> {
    let mut radices = est.levels.clone();
    radices[j] = 1;
    let others = Combinations::new(radices);
    let mut out = Vec::new();
    for c in 0..others.len() {
        let context = others.decode(c);
        for a in 0..est.levels[j] {
            for b in a + 1..est.levels[j] {
                out.push((a, b, context.clone()));
            }
        }
    }
    out
}

fn check_predictor(est: &PerSequenceEstimates, j: usize) -> Result<()> {
    if j >= est.levels.len() {
        return Err(Error::Dimension(format!("no predictor with index {j}")));
    }
    Ok(())
}

/// Rank-sum tests for every pair of levels of predictor `j` at every combination
/// of the other predictors.
pub fn local_tests(est: &PerSequenceEstimates, j: usize) -> Result<Vec<BaselineLocal>> {
    check_predictor(est, j)?;
    let d0 = est.d0;
    let labels: Vec<usize> = est.sequences.iter().map(|s| s.predictors[j]).collect();
    let grid = |v: Vec<f64>| v.chunks(d0).map(<[f64]>::to_vec).collect();
    Ok(comparisons(est, j)
        .into_iter()
        .map(|(a, b, context)| {
            let raw = family_pvalues(est, &labels, j, a, b, &context);
            let adj = bh_adjust(&raw);
            BaselineLocal {
                predictor: j,
                level_a: a,
                level_b: b,
                context,
                p_raw: grid(raw),
                p_adjusted: grid(adj),
            }
        })
        .collect())
}

fn min_adjusted(est: &PerSequenceEstimates, labels: &[usize], j: usize, plan: &[(usize, usize, Vec<usize>)]) -> f64 {
    plan.iter()
        .flat_map(|(a, b, ctx)| bh_adjust(&family_pvalues(est, labels, j, *a, *b, ctx)))
        .fold(1.0, f64::min)
}

/// How labels are shuffled under the null.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// The predictor is constant within subject; subject-to-level labels are permuted.
    Subjects,
    /// The predictor varies within subject; labels are permuted among each subject's sequences.
    WithinSubject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub predictor: usize,
    pub scheme: PermutationScheme,
    pub permutations: usize,
    /// Smallest BH-adjusted local p-value over all comparisons.
    pub observed: f64,
    pub p_value: f64,
}

/// Monte Carlo global test of predictor `j`; the statistic is the smallest
/// BH-adjusted local p-value and `p = (1 + #{perm <= observed}) / (1 + n_perm)`.
pub fn permutation_global_test(est: &PerSequenceEstimates, j: usize, n_perm: usize, seed: u64) -> Result<PermutationTest> {
    check_predictor(est, j)?;
    if n_perm < 99 {
        return Err(Error::Config(format!("at least 99 permutations are required, got {n_perm}")));
    }
    let groups = est.levels[j];
    if groups < 2 {
        return Err(Error::Config(format!("predictor {j} has fewer than two levels")));
    }
    let mut subject_level: Vec<Option<usize>> = vec![None; est.subjects];
    let mut between = true;
    for s in &est.sequences {
        match subject_level[s.subject] {
            None => subject_level[s.subject] = Some(s.predictors[j]),
            Some(l) if l != s.predictors[j] => between = false,
            _ => {}
        }
    }
    let scheme = if between {
        PermutationScheme::Subjects
    } else {
        PermutationScheme::WithinSubject
    };
    let units = match scheme {
        PermutationScheme::Subjects => subject_level.iter().flatten().count(),
        PermutationScheme::WithinSubject => est.subjects,
    };
    if units < groups {
        return Err(Error::Data(format!("{units} subjects cannot be split into {groups} groups")));
    }
    let labels: Vec<usize> = est.sequences.iter().map(|s| s.predictors[j]).collect();
    let plan = comparisons(est, j);
    let observed = min_adjusted(est, &labels, j, &plan);
    let below: usize = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[r as u64]);
            let permuted = match scheme {
                PermutationScheme::Subjects => {
                    let present: Vec<usize> = (0..est.subjects).filter(|&i| subject_level[i].is_some()).collect();
                    let mut levels: Vec<usize> = present.iter().map(|&i| subject_level[i].unwrap()).collect();
                    levels.shuffle(&mut rng);
                    let mut map = vec![0; est.subjects];
                    for (&i, &l) in present.iter().zip(&levels) {
                        map[i] = l;
                    }
                    est.sequences.iter().map(|s| map[s.subject]).collect::<Vec<_>>()
                }
                PermutationScheme::WithinSubject => {
                    let mut permuted = labels.clone();
                    for i in 0..est.subjects {
                        let idx: Vec<usize> = (0..labels.len()).filter(|&k| est.sequences[k].subject == i).collect();
                        let mut ls: Vec<usize> = idx.iter().map(|&k| labels[k]).collect();
                        ls.shuffle(&mut rng);
                        for (&k, &l) in idx.iter().zip(&ls) {
                            permuted[k] = l;
                        }
                    }
                    permuted
                }
            };
            usize::from(min_adjusted(est, &permuted, j, &plan) <= observed)
        })
        .sum();
    Ok(PermutationTest {
        predictor: j,
        scheme,
        permutations: n_perm,
        observed,
        p_value: (1 + below) as f64 / (1 + n_perm) as f64,
    })
}
