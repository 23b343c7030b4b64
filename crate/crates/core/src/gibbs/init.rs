use rand::Rng;

use super::Model;
use crate::dist::{bernoulli, PROB_FLOOR};
use crate::matrix::{floor_and_normalize, TransitionMatrix};
use crate::model::{empirical_transition_rows, ModelState, Slice};

/// Initial fixed-effect weight for every conditioning state.
pub const INITIAL_PI0: f64 = 0.8;

/// Starting configuration: every level in its own cluster, empirical transition
/// rows, `pi0 = 0.8`, indicators drawn from that weight and both concentrations at 1.
pub fn init_state<R: Rng + ?Sized>(model: &Model<'_>, rng: &mut R) -> ModelState {
    let ds = model.dataset;
    let d0 = ds.d0();
    let lambda00 = &model.hyper.lambda00;
    let z: Vec<Vec<usize>> = model
        .spec
        .predictors
        .iter()
        .map(|p| (0..p.levels).map(|l| l % p.clusters).collect())
        .collect();
    let pi_cluster = model
        .spec
        .predictors
        .iter()
        .map(|p| vec![1.0 / p.clusters as f64; p.clusters])
        .collect();
    let floored = |mut m: TransitionMatrix| {
        for y in 0..d0 {
            floor_and_normalize(m.row_mut(y), PROB_FLOOR);
        }
        m
    };
    let lambda_fixed = (0..model.clusters.len())
        .map(|c| {
            let clusters = model.clusters.decode(c);
            floored(empirical_transition_rows(ds, &Slice::Clusters { z: &z, clusters: &clusters }, lambda00))
        })
        .collect();
    let lambda_rand = (0..ds.subjects().len())
        .map(|i| floored(empirical_transition_rows(ds, &Slice::Subject(i), lambda00)))
        .collect();
    let pi0 = vec![INITIAL_PI0; d0];
    let v = ds
        .sequences()
        .iter()
        .map(|seq| seq.tokens.windows(2).map(|w| !bernoulli(rng, pi0[w[0]])).collect())
        .collect();
    ModelState {
        z,
        pi_cluster,
        v,
        pi0,
        lambda0: TransitionMatrix::from_repeated_row(lambda00),
        lambda_fixed,
        lambda_rand,
        alpha0: 1.0,
        alpha_re: 1.0,
    }
}
