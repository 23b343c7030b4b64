//! Prior over partitions of a predictor's levels induced by symmetric Dirichlet
//! cluster weights with a finite cluster budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALPHA_MIN: f64 = 1e-8;
const ALPHA_MAX: f64 = 1e6;
const CALIBRATION_TOL: f64 = 1e-10;

/// `log(x (x+1) ... (x+m-1))`; zero for `m = 0`.
pub fn log_rising_factorial(x: f64, m: usize) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("rising factorial needs x > 0, got {x}")));
    }
    Ok((0..m).map(|r| (x + r as f64).ln()).sum())
}

/// `log(x (x-1) ... (x-m+1))`; zero for `m = 0`.
pub fn log_falling_factorial(x: f64, m: usize) -> Result<f64> {
    if x < m as f64 {
        return Err(Error::Domain(format!("falling factorial needs x >= m, got x={x}, m={m}")));
    }
    Ok((0..m).map(|r| (x - r as f64).ln()).sum())
}

/// Set partition of `{0, .., d-1}` in canonical form: members sorted within each
/// block, blocks ordered by their smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let d: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; d];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::Domain("partition blocks must be nonempty".into()));
            }
            b.sort_unstable();
            for &m in b.iter() {
                if m >= d || seen[m] {
                    return Err(Error::Domain(format!(
                        "blocks must be disjoint and cover 0..{d}"
                    )));
                }
                seen[m] = true;
            }
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Partition { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Size of the ground set.
    pub fn ground_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// Partition induced by a label vector: two levels share a block iff their labels match.
pub fn partition_from_z(z: &[usize]) -> Partition {
    let mut blocks: Vec<(usize, Vec<usize>)> = Vec::new();
    for (level, &label) in z.iter().enumerate() {
        match blocks.iter_mut().find(|(l, _)| *l == label) {
            Some((_, b)) => b.push(level),
            None => blocks.push((label, vec![level])),
        }
    }
    // Blocks are created in order of first member, so this is already canonical.
    Partition {
        blocks: blocks.into_iter().map(|(_, b)| b).collect(),
    }
}

/// Number of distinct labels in `z`.
pub fn count_distinct(z: &[usize]) -> usize {
    let mut seen: Vec<usize> = Vec::with_capacity(z.len());
    for &h in z {
        if !seen.contains(&h) {
            seen.push(h);
        }
    }
    seen.len()
}

/// Log prior probability of a partition under `k` clusters with concentration `alpha`.
///
/// Returns negative infinity when the partition has more blocks than `k`.
pub fn log_partition_prior_prob(partition: &Partition, k: usize, alpha: f64) -> Result<f64> {
    if partition.len() > k {
        return Ok(f64::NEG_INFINITY);
    }
    let d = partition.ground_size();
    let mut lp = log_falling_factorial(k as f64, partition.len())? - log_rising_factorial(k as f64 * alpha, d)?;
    for b in partition.blocks() {
        lp += log_rising_factorial(alpha, b.len())?;
    }
    Ok(lp)
}

pub fn partition_prior_prob(partition: &Partition, k: usize, alpha: f64) -> Result<f64> {
    Ok(log_partition_prior_prob(partition, k, alpha)?.exp())
}

/// Prior probability that all `d` levels fall in a single cluster.
pub fn null_prior_prob(d: usize, k: usize, alpha: f64) -> f64 {
    if d <= 1 {
        return 1.0;
    }
    let lp = (k as f64).ln() + log_rising_factorial(alpha, d).expect("alpha > 0")
        - log_rising_factorial(k as f64 * alpha, d).expect("alpha > 0");
    lp.exp()
}

/// Result of [`calibrate_alpha`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    /// Null-model prior probability attained at `alpha`.
    pub achieved: f64,
    /// True when the target lies outside the attainable range and `alpha` sits at a bound.
    pub saturated: bool,
}

/// Finds the concentration whose null-model prior probability equals `target`.
///
/// The null probability decreases in `alpha`, so the search is a bisection on
/// `log alpha` over `[1e-8, 1e6]`. Unattainable targets saturate at the nearest bound.
pub fn calibrate_alpha(d: usize, k: usize, target: f64) -> Calibration {
    let f = |log_alpha: f64| null_prior_prob(d, k, log_alpha.exp());
    let (mut lo, mut hi) = (ALPHA_MIN.ln(), ALPHA_MAX.ln());
    let (p_lo, p_hi) = (f(lo), f(hi));
    if target <= p_hi {
        log::warn!(
            "null prior {target} unattainable for d={d}, k={k}; saturating at alpha={ALPHA_MAX} (achieved {p_hi})"
        );
        return Calibration { alpha: ALPHA_MAX, achieved: p_hi, saturated: true };
    }
    if target >= p_lo {
        log::warn!(
            "null prior {target} unattainable for d={d}, k={k}; saturating at alpha={ALPHA_MIN} (achieved {p_lo})"
        );
        return Calibration { alpha: ALPHA_MIN, achieved: p_lo, saturated: true };
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let p = f(mid);
        if (p - target).abs() <= CALIBRATION_TOL {
            break;
        }
        if p > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Calibration { alpha: mid.exp(), achieved: f(mid), saturated: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ln_gamma(x: f64) -> f64 {
        statrs::function::gamma::ln_gamma(x)
    }

    /// Prior mass of each partition by summing the Dirichlet-multinomial law of
    /// every label vector in `0..k` to the power `d`.
    fn enumerate_label_vectors(d: usize, k: usize, alpha: f64) -> Vec<(Partition, f64)> {
        let mut out: Vec<(Partition, f64)> = Vec::new();
        let total = k.pow(d as u32);
        for code in 0..total {
            let mut z = vec![0; d];
            let mut c = code;
            for zi in z.iter_mut() {
                *zi = c % k;
                c /= k;
            }
            let mut n = vec![0usize; k];
            z.iter().for_each(|&h| n[h] += 1);
            let mut lp = ln_gamma(k as f64 * alpha) - ln_gamma(k as f64 * alpha + d as f64);
            for &nh in &n {
                lp += ln_gamma(alpha + nh as f64) - ln_gamma(alpha);
            }
            let p = partition_from_z(&z);
            match out.iter_mut().find(|(q, _)| *q == p) {
                Some((_, m)) => *m += lp.exp(),
                None => out.push((p, lp.exp())),
            }
        }
        out
    }

    #[test]
    fn rising_factorial_examples() {
        assert!((log_rising_factorial(1.0, 3).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(log_rising_factorial(2.5, 0).unwrap(), 0.0);
        assert!((log_rising_factorial(0.5, 2).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        assert!(log_rising_factorial(0.0, 2).is_err());
        assert!(log_rising_factorial(-1.0, 2).is_err());
    }

    #[test]
    fn falling_factorial_examples() {
        assert!((log_falling_factorial(3.0, 2).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(log_falling_factorial(5.0, 0).unwrap(), 0.0);
        assert!((log_falling_factorial(4.0, 4).unwrap() - 24f64.ln()).abs() < 1e-14);
        assert!(log_falling_factorial(2.0, 3).is_err());
    }

    #[test]
    fn two_level_prior_matches_enumeration() {
        let table = enumerate_label_vectors(2, 2, 1.0);
        for (p, mass) in &table {
            let got = partition_prior_prob(p, 2, 1.0).unwrap();
            assert!((got - mass).abs() < 1e-14, "{p:?}: {got} vs {mass}");
        }
        let merged = Partition::new(vec![vec![0, 1]]).unwrap();
        let split = Partition::new(vec![vec![0], vec![1]]).unwrap();
        assert!((partition_prior_prob(&merged, 2, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((partition_prior_prob(&split, 2, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn prior_matches_label_enumeration_with_smaller_budget() {
        // d = 4, k = 3: partitions with four blocks are impossible.
        for &alpha in &[0.2, 1.0, 3.5] {
            let table = enumerate_label_vectors(4, 3, alpha);
            for (p, mass) in &table {
                let got = partition_prior_prob(p, 3, alpha).unwrap();
                assert!((got - mass).abs() < 1e-13);
            }
        }
        let singletons = Partition::new(vec![vec![0], vec![1], vec![2], vec![3]]).unwrap();
        assert_eq!(partition_prior_prob(&singletons, 3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn null_prob_examples() {
        let from_enum: f64 = enumerate_label_vectors(3, 3, 1.0)
            .iter()
            .filter(|(p, _)| p.len() == 1)
            .map(|(_, m)| m)
            .sum();
        assert!((from_enum - 0.3).abs() < 1e-14);
        assert!((null_prior_prob(3, 3, 1.0) - 0.3).abs() < 1e-14);
        assert!((null_prior_prob(2, 2, 1.0) - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(null_prior_prob(1, 1, 0.7), 1.0);
        let single = Partition::new(vec![vec![0, 1, 2]]).unwrap();
        assert!((partition_prior_prob(&single, 3, 0.4).unwrap() - null_prior_prob(3, 3, 0.4)).abs() < 1e-15);
    }

    #[test]
    fn null_prob_decreasing_in_alpha() {
        for d in 2..=6 {
            let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(-4.0 + i as f64 * 0.15)).collect();
            for w in grid.windows(2) {
                assert!(null_prior_prob(d, d, w[1]) < null_prior_prob(d, d, w[0]));
            }
        }
    }

    #[test]
    fn calibration_examples() {
        let root = (-3.0 + 65f64.sqrt()) / 14.0;
        let c = calibrate_alpha(3, 3, 0.5);
        assert!(!c.saturated);
        assert!((c.alpha - root).abs() < 1e-8, "{} vs {root}", c.alpha);
        assert!((c.alpha - 0.36157).abs() < 1e-4);

        let c = calibrate_alpha(3, 3, 0.3);
        assert!((c.alpha - 1.0).abs() < 1e-6);

        let c = calibrate_alpha(2, 2, 0.5);
        assert!(c.saturated);
        assert_eq!(c.alpha, 1e6);
        assert!(c.achieved > 0.5 && c.achieved < 0.5 + 1e-5);
        assert!((c.achieved - 0.5 - 2.5e-7).abs() < 1e-9);
    }

    #[test]
    fn partition_from_labels() {
        let expect = Partition::new(vec![vec![0, 1, 2], vec![3]]).unwrap();
        assert_eq!(partition_from_z(&[0, 0, 0, 2]), expect);
        assert_eq!(partition_from_z(&[1, 1, 1, 0]), expect);
        assert_eq!(partition_from_z(&[2, 2, 2, 1]), expect);
        assert_eq!(
            partition_from_z(&[0, 1, 2]),
            Partition::new(vec![vec![0], vec![1], vec![2]]).unwrap()
        );
    }

    #[test]
    fn invalid_partitions_rejected() {
        assert!(Partition::new(vec![vec![0, 1], vec![1]]).is_err());
        assert!(Partition::new(vec![vec![0], vec![]]).is_err());
        assert!(Partition::new(vec![vec![0, 3]]).is_err());
    }

    proptest! {
        #[test]
        fn relabeling_preserves_partition(z in proptest::collection::vec(0usize..5, 1..8), shift in 0usize..5) {
            let perm: Vec<usize> = (0..5).map(|h| (h * 3 + shift) % 5).collect();
            let relabeled: Vec<usize> = z.iter().map(|&h| perm[h]).collect();
            prop_assert_eq!(partition_from_z(&z), partition_from_z(&relabeled));
            prop_assert_eq!(partition_from_z(&z).len(), count_distinct(&z));
        }
    }
}
