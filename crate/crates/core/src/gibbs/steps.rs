//! The individual full-conditional updates.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::Model;
use crate::dist::{self, bernoulli, categorical_log, dirichlet_into, normalize_log};
use crate::matrix::TransitionMatrix;
use crate::model::{Combinations, Hyperparams, ModelState, PredictorSpec, TransitionCounts};
use crate::rng::{substream, ChainRng};

/// Shape floor for the concentration updates.
const SHAPE_FLOOR: f64 = 1e-3;

/// Source of randomness for the row-wise Dirichlet updates (steps 5 and 6).
pub enum RowStreams<'r> {
    /// Draw rows in order from the chain's stream.
    Shared(&'r mut ChainRng),
    /// Draw each row group in parallel from its own substream of `(seed, sweep, step, unit)`.
    Substreams { seed: u64, sweep: u64 },
}

/// Sums per-level-combination counts into per-cluster-combination counts under `z`.
pub(crate) fn aggregate_into(
    levels: &Combinations,
    n_level: &[Vec<u64>],
    z: &[Vec<usize>],
    clusters: &Combinations,
    out: &mut [Vec<u64>],
) {
    for block in out.iter_mut() {
        block.iter_mut().for_each(|c| *c = 0);
    }
    let mut digits = vec![0usize; z.len()];
    for (l, block) in n_level.iter().enumerate() {
        if block.iter().all(|&c| c == 0) {
            continue;
        }
        for (j, ld) in levels.decode(l).into_iter().enumerate() {
            digits[j] = z[j][ld];
        }
        let target = &mut out[clusters.encode(&digits)];
        for (t, &c) in target.iter_mut().zip(block) {
            *t += c;
        }
    }
}

/// Dirichlet-multinomial log marginal of fixed-effect counts with the rows integrated out.
struct FixedMarginal {
    d0: usize,
    prior: Vec<f64>,
    ln_gamma_prior: Vec<f64>,
    ln_gamma_row_total: Vec<f64>,
    row_total: Vec<f64>,
}

impl FixedMarginal {
    fn new(state: &ModelState) -> Self {
        let d0 = state.lambda0.dim();
        let prior: Vec<f64> = state.lambda0.as_slice().iter().map(|&l| state.alpha0 * l).collect();
        let ln_gamma_prior = prior.iter().map(|&a| ln_gamma(a)).collect();
        let row_total: Vec<f64> = prior.chunks(d0).map(|r| r.iter().sum()).collect();
        let ln_gamma_row_total = row_total.iter().map(|&a| ln_gamma(a)).collect();
        FixedMarginal {
            d0,
            prior,
            ln_gamma_prior,
            ln_gamma_row_total,
            row_total,
        }
    }

    fn log_marginal(&self, blocks: &[Vec<u64>]) -> f64 {
        let d0 = self.d0;
        let mut total = 0.0;
        for block in blocks {
            for yp in 0..d0 {
                let row = &block[yp * d0..(yp + 1) * d0];
                let n: u64 = row.iter().sum();
                if n == 0 {
                    continue;
                }
                total += self.ln_gamma_row_total[yp] - ln_gamma(self.row_total[yp] + n as f64);
                for (y, &c) in row.iter().enumerate() {
                    if c > 0 {
                        let idx = yp * d0 + y;
                        total += ln_gamma(self.prior[idx] + c as f64) - self.ln_gamma_prior[idx];
                    }
                }
            }
        }
        total
    }
}

fn z_log_masses(
    model: &Model<'_>,
    state: &mut ModelState,
    counts: &TransitionCounts,
    marginal: &FixedMarginal,
    scratch: &mut [Vec<u64>],
    j: usize,
    l: usize,
) -> Vec<f64> {
    let original = state.z[j][l];
    let k = state.pi_cluster[j].len();
    let masses = (0..k)
        .map(|h| {
            state.z[j][l] = h;
            aggregate_into(&model.levels, &counts.n_level, &state.z, &model.clusters, scratch);
            state.pi_cluster[j][h].ln() + marginal.log_marginal(scratch)
        })
        .collect();
    state.z[j][l] = original;
    masses
}

/// Full conditional of `z[j][l]` over the `k_j` labels, normalized.
pub fn z_full_conditional(
    model: &Model<'_>,
    state: &ModelState,
    counts: &TransitionCounts,
    j: usize,
    l: usize,
) -> Vec<f64> {
    let mut state = state.clone();
    let marginal = FixedMarginal::new(&state);
    let mut scratch = counts.n_fixed.clone();
    normalize_log(&z_log_masses(model, &mut state, counts, &marginal, &mut scratch, j, l))
}

/// Step 1: redraws every cluster label, predictors and levels in index order.
pub fn step1_sample_z<R: Rng + ?Sized>(
    model: &Model<'_>,
    state: &mut ModelState,
    counts: &mut TransitionCounts,
    rng: &mut R,
) {
    let marginal = FixedMarginal::new(state);
    let mut scratch = counts.n_fixed.clone();
    for j in 0..state.z.len() {
        for l in 0..state.z[j].len() {
            let masses = z_log_masses(model, state, counts, &marginal, &mut scratch, j, l);
            state.z[j][l] = categorical_log(rng, &masses);
        }
    }
    counts.aggregate_fixed(&model.levels, &state.z, &model.clusters);
}

/// Step 2: cluster weights from their Dirichlet full conditional.
pub fn step2_sample_cluster_weights<R: Rng + ?Sized>(spec: &PredictorSpec, state: &mut ModelState, rng: &mut R) {
    for (j, prior) in spec.predictors.iter().enumerate() {
        let mut conc = vec![prior.alpha; prior.clusters];
        for &h in &state.z[j] {
            conc[h] += 1.0;
        }
        dirichlet_into(rng, &conc, &mut state.pi_cluster[j]);
    }
}

/// Step 3: mixture indicators from their Bernoulli full conditionals.
///
/// Rebuilds `counts` from the new indicators as it goes.
pub fn step3_sample_v<R: Rng + ?Sized>(
    model: &Model<'_>,
    state: &mut ModelState,
    counts: &mut TransitionCounts,
    rng: &mut R,
) {
    let d0 = model.d0();
    for block in counts.n_rand.iter_mut().chain(counts.n_level.iter_mut()) {
        block.iter_mut().for_each(|c| *c = 0);
    }
    counts.n_v.iter_mut().for_each(|c| *c = [0, 0]);
    let mut fixed_prob = vec![0.0; d0 * d0];
    for (seq, v) in model.dataset.sequences().iter().zip(state.v.iter_mut()) {
        let fixed = &state.lambda_fixed[state_cluster(&state.z, &model.clusters, &seq.predictors)];
        let subject = &state.lambda_rand[seq.subject];
        for yp in 0..d0 {
            let w0 = state.pi0[yp];
            for y in 0..d0 {
                let pf = w0 * fixed[(yp, y)];
                let pr = (1.0 - w0) * subject[(yp, y)];
                fixed_prob[yp * d0 + y] = if pf + pr > 0.0 { pf / (pf + pr) } else { w0 };
            }
        }
        let level = model.levels.encode(&seq.predictors);
        for (w, flag) in seq.tokens.windows(2).zip(v.iter_mut()) {
            let cell = w[0] * d0 + w[1];
            *flag = !bernoulli(rng, fixed_prob[cell]);
            if *flag {
                counts.n_rand[seq.subject][cell] += 1;
            } else {
                counts.n_level[level][cell] += 1;
            }
            counts.n_v[w[0]][*flag as usize] += 1;
        }
    }
    counts.aggregate_fixed(&model.levels, &state.z, &model.clusters);
}

fn state_cluster(z: &[Vec<usize>], clusters: &Combinations, x: &[usize]) -> usize {
    let mut idx = 0;
    for ((&l, zj), &r) in x.iter().zip(z).zip(clusters.radices()) {
        idx = idx * r + zj[l];
    }
    idx
}

/// Step 4: fixed-effect weight per conditioning state from its Beta full conditional.
pub fn step4_sample_pi0<R: Rng + ?Sized>(
    hyper: &Hyperparams,
    state: &mut ModelState,
    counts: &TransitionCounts,
    rng: &mut R,
) {
    for (p, n) in state.pi0.iter_mut().zip(&counts.n_v) {
        *p = dist::beta(rng, hyper.a0 + n[0] as f64, hyper.a1 + n[1] as f64);
    }
}

fn sample_rows<R: Rng + ?Sized>(rng: &mut R, m: &mut TransitionMatrix, lambda0: &TransitionMatrix, conc: f64, n: &[u64]) {
    let d0 = m.dim();
    let mut alpha = vec![0.0; d0];
    for yp in 0..d0 {
        for y in 0..d0 {
            alpha[y] = conc * lambda0[(yp, y)] + n[yp * d0 + y] as f64;
        }
        dirichlet_into(rng, &alpha, m.row_mut(yp));
    }
}

fn sample_row_groups(
    streams: &mut RowStreams<'_>,
    step: u64,
    rows: &mut [TransitionMatrix],
    counts: &[Vec<u64>],
    lambda0: &TransitionMatrix,
    conc: f64,
) {
    match streams {
        RowStreams::Shared(rng) => {
            for (m, n) in rows.iter_mut().zip(counts) {
                sample_rows(*rng, m, lambda0, conc, n);
            }
        }
        RowStreams::Substreams { seed, sweep } => {
            let (seed, sweep) = (*seed, *sweep);
            rows.par_iter_mut().zip(counts.par_iter()).enumerate().for_each(|(unit, (m, n))| {
                let mut rng = substream(seed, &[sweep, step, unit as u64]);
                sample_rows(&mut rng, m, lambda0, conc, n);
            });
        }
    }
}

/// Step 5: subject rows from `Dir(alpha_re * lambda0 + n_rand)`.
pub fn step5_sample_lambda_rand(state: &mut ModelState, counts: &TransitionCounts, streams: &mut RowStreams<'_>) {
    let conc = state.alpha_re;
    sample_row_groups(streams, 5, &mut state.lambda_rand, &counts.n_rand, &state.lambda0, conc);
}

/// Step 6: fixed-effect rows from `Dir(alpha0 * lambda0 + n_fixed)`; empty
/// cluster combinations are drawn from the prior.
pub fn step6_sample_lambda_fixed(state: &mut ModelState, counts: &TransitionCounts, streams: &mut RowStreams<'_>) {
    let conc = state.alpha0;
    sample_row_groups(streams, 6, &mut state.lambda_fixed, &counts.n_fixed, &state.lambda0, conc);
}

/// Auxiliary quantities of step 7.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxDraw {
    pub d0: usize,
    /// Table counts `v(y | y')` summed over fixed and subject blocks, flattened `d0 x d0`.
    pub tables: Vec<u64>,
    /// Tables in the fixed-effect blocks (`v_0`).
    pub tables_fixed: u64,
    /// Tables in the subject blocks.
    pub tables_rand: u64,
    pub log_r0: f64,
    pub s0: u64,
    pub log_r_re: f64,
    pub s_re: u64,
}

/// Number of occupied tables after seating `n` customers with weight `a`.
fn crt_tables<R: Rng + ?Sized>(rng: &mut R, n: u64, a: f64) -> u64 {
    let mut tables = 0;
    for r in 0..n {
        if rng.random::<f64>() * (r as f64 + a) < a {
            tables += 1;
        }
    }
    tables
}

fn auxiliaries_for<R: Rng + ?Sized>(
    rng: &mut R,
    blocks: &[Vec<u64>],
    lambda0: &TransitionMatrix,
    conc: f64,
    tables: &mut [u64],
) -> (u64, f64, u64) {
    let d0 = lambda0.dim();
    let (mut total, mut log_r, mut s) = (0u64, 0.0, 0u64);
    for block in blocks {
        for yp in 0..d0 {
            let row = &block[yp * d0..(yp + 1) * d0];
            let n: u64 = row.iter().sum();
            if n == 0 {
                continue;
            }
            for (y, &c) in row.iter().enumerate() {
                if c > 0 {
                    let m = crt_tables(rng, c, conc * lambda0[(yp, y)]);
                    tables[yp * d0 + y] += m;
                    total += m;
                }
            }
            log_r += dist::log_beta(rng, conc + 1.0, n as f64);
            if bernoulli(rng, n as f64 / (n as f64 + conc)) {
                s += 1;
            }
        }
    }
    (total, log_r, s)
}

/// Step 7: table counts for every nonzero cell plus the `r`, `s` auxiliaries of
/// both concentration parameters. Rows with no transitions contribute nothing.
pub fn step7_sample_auxiliaries<R: Rng + ?Sized>(state: &ModelState, counts: &TransitionCounts, rng: &mut R) -> AuxDraw {
    let d0 = state.lambda0.dim();
    let mut tables = vec![0u64; d0 * d0];
    let (tables_fixed, log_r0, s0) = auxiliaries_for(rng, &counts.n_fixed, &state.lambda0, state.alpha0, &mut tables);
    let (tables_rand, log_r_re, s_re) =
        auxiliaries_for(rng, &counts.n_rand, &state.lambda0, state.alpha_re, &mut tables);
    AuxDraw {
        d0,
        tables,
        tables_fixed,
        tables_rand,
        log_r0,
        s0,
        log_r_re,
        s_re,
    }
}

fn concentration<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64, what: &str) -> f64 {
    let shape = if shape > 0.0 {
        shape
    } else {
        log::warn!("{what}: nonpositive gamma shape {shape}, flooring at {SHAPE_FLOOR}");
        SHAPE_FLOOR
    };
    dist::gamma(rng, shape, rate)
}

/// Step 8: `alpha0 ~ Ga(a + v0 - s0, b - log r0)`.
pub fn step8_sample_alpha0<R: Rng + ?Sized>(aux: &AuxDraw, hyper: &Hyperparams, rng: &mut R) -> f64 {
    let shape = hyper.a_alpha0 + aux.tables_fixed as f64 - aux.s0 as f64;
    concentration(rng, shape, hyper.b_alpha0 - aux.log_r0, "alpha0")
}

/// Step 9: random-effects concentration, as step 8 with the subject blocks.
pub fn step9_sample_alpha_re<R: Rng + ?Sized>(aux: &AuxDraw, hyper: &Hyperparams, rng: &mut R) -> f64 {
    let shape = hyper.a_alpha_re + aux.tables_rand as f64 - aux.s_re as f64;
    concentration(rng, shape, hyper.b_alpha_re - aux.log_r_re, "alpha_re")
}

/// Step 10: base rows from `Dir(alpha00 * lambda00 + v(. | y'))`.
pub fn step10_sample_lambda0<R: Rng + ?Sized>(aux: &AuxDraw, hyper: &Hyperparams, rng: &mut R) -> TransitionMatrix {
    let d0 = aux.d0;
    let mut out = TransitionMatrix::zeros(d0);
    let mut alpha = vec![0.0; d0];
    for yp in 0..d0 {
        for y in 0..d0 {
            alpha[y] = hyper.alpha00 * hyper.lambda00[y] + aux.tables[yp * d0 + y] as f64;
        }
        dirichlet_into(rng, &alpha, out.row_mut(yp));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::init_state;
    use crate::model::{count_transitions, SequenceDataset};
    use crate::rng::seeded;
    use crate::testutil::{mean_se, spec_for, toy_dataset};

    fn setup(
        ds: &SequenceDataset,
        spec: &PredictorSpec,
        hyper: &Hyperparams,
    ) -> (ModelState, TransitionCounts) {
        let model = Model::new(ds, spec, hyper).unwrap();
        let state = init_state(&model, &mut seeded(3));
        let counts = count_transitions(ds, &state).unwrap();
        (state, counts)
    }

    /// Dirichlet-multinomial marginal by the sequential predictive rule.
    fn predictive_log_marginal(alpha: &[f64], transitions: &[usize]) -> f64 {
        let mut n = vec![0.0; alpha.len()];
        let total: f64 = alpha.iter().sum();
        let mut lp = 0.0;
        for (seen, &y) in transitions.iter().enumerate() {
            lp += ((alpha[y] + n[y]) / (total + seen as f64)).ln();
            n[y] += 1.0;
        }
        lp
    }

    #[test]
    fn z_conditional_matches_enumeration() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 0.7);
        let hyper = Hyperparams::with_lambda00(vec![0.3, 0.7]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, _) = setup(&ds, &spec, &hyper);
        state.alpha0 = 1.7;
        state.lambda0 = TransitionMatrix::from_rows(vec![vec![0.4, 0.6], vec![0.25, 0.75]]).unwrap();
        state.pi_cluster[0] = vec![0.35, 0.65];
        state.z[0] = vec![0, 1];
        let counts = count_transitions(&ds, &state).unwrap();
        let got = z_full_conditional(&model, &state, &counts, 0, 1);

        let mut oracle = Vec::new();
        for h in 0..2 {
            let z = [0usize, h];
            let mut lp = state.pi_cluster[0][h].ln();
            for cluster in 0..2 {
                for yp in 0..2 {
                    let mut next = Vec::new();
                    for (seq, v) in ds.sequences().iter().zip(&state.v) {
                        if z[seq.predictors[0]] != cluster {
                            continue;
                        }
                        for (w, &flag) in seq.tokens.windows(2).zip(v) {
                            if !flag && w[0] == yp {
                                next.push(w[1]);
                            }
                        }
                    }
                    let alpha: Vec<f64> = state.lambda0.row(yp).iter().map(|l| state.alpha0 * l).collect();
                    lp += predictive_log_marginal(&alpha, &next);
                }
            }
            oracle.push(lp);
        }
        let norm = crate::dist::log_add_exp(oracle[0], oracle[1]);
        for h in 0..2 {
            assert!((got[h] - (oracle[h] - norm).exp()).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn z_conditional_is_prior_without_fixed_transitions() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, _) = setup(&ds, &spec, &hyper);
        for v in state.v.iter_mut() {
            v.iter_mut().for_each(|f| *f = true);
        }
        state.pi_cluster[0] = vec![0.2, 0.8];
        let counts = count_transitions(&ds, &state).unwrap();
        let p = z_full_conditional(&model, &state, &counts, 0, 0);
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn z_conditional_symmetric_for_identical_levels() {
        let ds = SequenceDataset::new(
            crate::model::StateSpace::new(["a", "b"]).unwrap(),
            vec![crate::model::Factor::new("g", ["F", "W", "X"]).unwrap()],
            vec!["s".into()],
            vec![
                crate::testutil::seq("1", 0, &[0], &[0, 1, 1, 0]),
                crate::testutil::seq("2", 0, &[1], &[0, 1, 1, 0]),
                crate::testutil::seq("3", 0, &[2], &[1, 1, 0, 0]),
            ],
        )
        .unwrap();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, _) = setup(&ds, &spec, &hyper);
        state.v = ds.sequences().iter().map(|s| vec![false; s.transitions()]).collect();
        state.pi_cluster[0] = vec![1.0 / 3.0; 3];
        state.z[0] = vec![0, 1, 2];
        let counts = count_transitions(&ds, &state).unwrap();
        // Level 2 joining level 0's cluster or level 1's cluster is equally likely.
        let p = z_full_conditional(&model, &state, &counts, 0, 2);
        assert!((p[0] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn step1_keeps_counts_consistent() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, mut counts) = setup(&ds, &spec, &hyper);
        let mut rng = seeded(9);
        for _ in 0..20 {
            step1_sample_z(&model, &mut state, &mut counts, &mut rng);
            assert_eq!(counts, count_transitions(&ds, &state).unwrap());
        }
    }

    #[test]
    fn step2_conjugate_mean() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let (mut state, _) = setup(&ds, &spec, &hyper);
        state.z[0] = vec![0, 0];
        let mut rng = seeded(1);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| {
                step2_sample_cluster_weights(&spec, &mut state, &mut rng);
                state.pi_cluster[0][0]
            })
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - 0.75).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn step3_bayes_probability() {
        let ds = SequenceDataset::new(
            crate::model::StateSpace::new(["a", "b"]).unwrap(),
            vec![crate::model::Factor::new("g", ["F", "W"]).unwrap()],
            vec!["s".into()],
            vec![crate::testutil::seq("1", 0, &[0], &[0, 1])],
        )
        .unwrap();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, mut counts) = setup(&ds, &spec, &hyper);
        state.pi0 = vec![0.5, 0.5];
        let fixed = TransitionMatrix::from_rows(vec![vec![0.1, 0.9], vec![0.5, 0.5]]).unwrap();
        for m in &mut state.lambda_fixed {
            *m = fixed.clone();
        }
        state.lambda_rand[0] = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let mut rng = seeded(2);
        let n = 50_000;
        let mut fixed_hits = 0;
        for _ in 0..n {
            step3_sample_v(&model, &mut state, &mut counts, &mut rng);
            if !state.v[0][0] {
                fixed_hits += 1;
            }
        }
        let p = fixed_hits as f64 / n as f64;
        let se = (0.9f64 * 0.1 / n as f64).sqrt();
        assert!((p - 0.9).abs() < 3.0 * se, "{p}");
        assert_eq!(counts, count_transitions(&ds, &state).unwrap());
    }

    #[test]
    fn step3_degenerate_weight_routes_everything_fixed() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let model = Model::new(&ds, &spec, &hyper).unwrap();
        let (mut state, mut counts) = setup(&ds, &spec, &hyper);
        state.pi0 = vec![1.0, 1.0];
        step3_sample_v(&model, &mut state, &mut counts, &mut seeded(0));
        assert!(state.v.iter().flatten().all(|&f| !f));
        assert_eq!(counts.n_rand.iter().flatten().sum::<u64>(), 0);
    }

    #[test]
    fn step4_conjugate_mean() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let (mut state, mut counts) = setup(&ds, &spec, &hyper);
        counts.n_v = vec![[10, 0], [0, 0]];
        let mut rng = seeded(4);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..50_000 {
            step4_sample_pi0(&hyper, &mut state, &counts, &mut rng);
            a.push(state.pi0[0]);
            b.push(state.pi0[1]);
        }
        let (m, se) = mean_se(&a);
        assert!((m - 11.0 / 12.0).abs() < 3.0 * se);
        let (m, se) = mean_se(&b);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    fn check_row_means(draws: &[Vec<f64>], alpha: &[f64]) {
        let total: f64 = alpha.iter().sum();
        for (y, &a) in alpha.iter().enumerate() {
            let xs: Vec<f64> = draws.iter().map(|d| d[y]).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - a / total).abs() < 3.0 * se, "cell {y}: {m} vs {}", a / total);
        }
    }

    #[test]
    fn steps5_and_6_conjugate_means() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let (mut state, counts) = setup(&ds, &spec, &hyper);
        state.alpha0 = 2.5;
        state.alpha_re = 0.8;
        state.lambda0 = TransitionMatrix::from_rows(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let mut rng = seeded(5);
        let (mut rand_rows, mut fixed_rows) = (Vec::new(), Vec::new());
        for _ in 0..40_000 {
            let mut streams = RowStreams::Shared(&mut rng);
            step5_sample_lambda_rand(&mut state, &counts, &mut streams);
            step6_sample_lambda_fixed(&mut state, &counts, &mut streams);
            rand_rows.push(state.lambda_rand[0].row(1).to_vec());
            fixed_rows.push(state.lambda_fixed[1].row(0).to_vec());
        }
        let n = &counts.n_rand[0];
        check_row_means(&rand_rows, &[0.8 * 0.6 + n[2] as f64, 0.8 * 0.4 + n[3] as f64]);
        let n = &counts.n_fixed[1];
        check_row_means(&fixed_rows, &[2.5 * 0.3 + n[0] as f64, 2.5 * 0.7 + n[1] as f64]);
    }

    #[test]
    fn parallel_rows_are_reproducible_and_stochastic() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let (state, counts) = setup(&ds, &spec, &hyper);
        let run = || {
            let mut s = state.clone();
            let mut streams = RowStreams::Substreams { seed: 11, sweep: 4 };
            step5_sample_lambda_rand(&mut s, &counts, &mut streams);
            step6_sample_lambda_fixed(&mut s, &counts, &mut streams);
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        a.check_invariants(1e-10).unwrap();
    }

    #[test]
    fn crt_expectation() {
        let mut rng = seeded(6);
        let (n, a) = (12u64, 0.35);
        let draws: Vec<f64> = (0..100_000).map(|_| crt_tables(&mut rng, n, a) as f64).collect();
        let expected: f64 = (0..n).map(|r| a / (r as f64 + a)).sum();
        let (m, se) = mean_se(&draws);
        assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected}");
        assert_eq!(crt_tables(&mut rng, 1, a), 1);
        assert_eq!(crt_tables(&mut rng, 0, a), 0);
    }

    #[test]
    fn step7_empty_counts() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let (state, _) = setup(&ds, &spec, &hyper);
        let counts = TransitionCounts::empty(2, 2, 2, 2);
        let aux = step7_sample_auxiliaries(&state, &counts, &mut seeded(0));
        assert_eq!(aux.tables, vec![0; 4]);
        assert_eq!((aux.tables_fixed, aux.s0, aux.log_r0), (0, 0, 0.0));
    }

    #[test]
    fn step8_gamma_mean() {
        let hyper = Hyperparams::with_lambda00(vec![0.5, 0.5]);
        let aux = AuxDraw {
            d0: 2,
            tables: vec![0; 4],
            tables_fixed: 3,
            tables_rand: 0,
            log_r0: -1.0,
            s0: 1,
            log_r_re: 0.0,
            s_re: 0,
        };
        let mut rng = seeded(8);
        let a: Vec<f64> = (0..50_000).map(|_| step8_sample_alpha0(&aux, &hyper, &mut rng)).collect();
        let (m, se) = mean_se(&a);
        assert!((m - 1.5).abs() < 3.0 * se, "{m}");
        let b: Vec<f64> = (0..50_000).map(|_| step9_sample_alpha_re(&aux, &hyper, &mut rng)).collect();
        let (m, se) = mean_se(&b);
        assert!((m - 1.0).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn step10_conjugate_mean() {
        let mut hyper = Hyperparams::with_lambda00(vec![0.2, 0.8]);
        hyper.alpha00 = 1.5;
        let aux = AuxDraw {
            d0: 2,
            tables: vec![3, 1, 0, 0],
            tables_fixed: 4,
            tables_rand: 0,
            log_r0: -1.0,
            s0: 1,
            log_r_re: 0.0,
            s_re: 0,
        };
        let mut rng = seeded(10);
        let (mut r0, mut r1) = (Vec::new(), Vec::new());
        for _ in 0..40_000 {
            let m = step10_sample_lambda0(&aux, &hyper, &mut rng);
            assert!(m.is_row_stochastic(1e-10));
            r0.push(m.row(0).to_vec());
            r1.push(m.row(1).to_vec());
        }
        check_row_means(&r0, &[1.5 * 0.2 + 3.0, 1.5 * 0.8 + 1.0]);
        check_row_means(&r1, &[0.3, 1.2]);
    }
}
