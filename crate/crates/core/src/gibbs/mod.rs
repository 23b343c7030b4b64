//! Blocked Gibbs sampler for the mixed-effects Markov chain model.
//!
//! One sweep runs the updates in this order:
//!
//! 1. cluster labels `z` (fixed-effect rows integrated out),
//! 2. cluster weights,
//! 7. table counts and concentration auxiliaries (all transition rows integrated out),
//! 8. `alpha0`, 9. `alpha_re`, 10. `lambda0`,
//! 5. subject rows, 6. fixed-effect rows,
//! 3. mixture indicators `v` (counts are rebuilt here),
//! 4. fixed-effect weights `pi0`.
//!
//! Steps 1 and 7-10 are collapsed updates, so the explicit rows must be redrawn
//! after them and before they are used to route transitions in step 3.

mod init;
mod steps;

use serde::{Deserialize, Serialize};

pub use init::init_state;
pub(crate) use steps::aggregate_into;
pub use steps::{
    step10_sample_lambda0, step1_sample_z, step2_sample_cluster_weights, step3_sample_v, step4_sample_pi0,
    step5_sample_lambda_rand, step6_sample_lambda_fixed, step7_sample_auxiliaries, step8_sample_alpha0,
    step9_sample_alpha_re, z_full_conditional, AuxDraw, RowStreams,
};

use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;
use crate::model::{
    count_transitions, Combinations, Hyperparams, ModelState, PredictorSpec, SequenceDataset, TransitionCounts,
};
use crate::rng::{seeded, ChainRng};

/// Largest number of cluster combinations the sampler will allocate rows for.
const MAX_CLUSTER_COMBINATIONS: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Draw rows of steps 5 and 6 in parallel from per-row substreams.
    pub parallel: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iterations: 5000,
            burn_in: 2000,
            thin: 5,
            seed: 0,
            parallel: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of draws kept: `floor((iterations - burn_in) / thin)`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1) % self.thin == 0
    }
}

/// Static view of the data and prior used by every step.
#[derive(Clone, Debug)]
pub struct Model<'a> {
    pub dataset: &'a SequenceDataset,
    pub spec: &'a PredictorSpec,
    pub hyper: &'a Hyperparams,
    pub levels: Combinations,
    pub clusters: Combinations,
}

impl<'a> Model<'a> {
    pub fn new(dataset: &'a SequenceDataset, spec: &'a PredictorSpec, hyper: &'a Hyperparams) -> Result<Self> {
        hyper.validate(dataset.d0())?;
        spec.validate(dataset.factors())?;
        let clusters = Combinations::new(spec.cluster_radices());
        if clusters.len() > MAX_CLUSTER_COMBINATIONS {
            return Err(Error::Config(format!(
                "{} cluster combinations exceed the supported maximum of {MAX_CLUSTER_COMBINATIONS}",
                clusters.len()
            )));
        }
        Ok(Model {
            dataset,
            spec,
            hyper,
            levels: dataset.level_combinations(),
            clusters,
        })
    }

    pub fn d0(&self) -> usize {
        self.dataset.d0()
    }
}

/// A running chain: current state, its counts and its random stream.
#[derive(Clone, Debug)]
pub struct Chain {
    pub state: ModelState,
    pub counts: TransitionCounts,
    pub rng: ChainRng,
    seed: u64,
    parallel: bool,
    sweeps: u64,
}

impl Chain {
    /// Initializes a chain from the default starting configuration.
    pub fn new(model: &Model<'_>, seed: u64, parallel: bool) -> Result<Self> {
        let mut rng = seeded(seed);
        let state = init_state(model, &mut rng);
        Self::from_state(model, state, rng, seed, parallel)
    }

    pub fn from_state(model: &Model<'_>, state: ModelState, rng: ChainRng, seed: u64, parallel: bool) -> Result<Self> {
        let counts = count_transitions(model.dataset, &state)?;
        Ok(Chain {
            state,
            counts,
            rng,
            seed,
            parallel,
            sweeps: 0,
        })
    }

    /// Recomputes the counts after the data or the indicators were replaced.
    pub fn recount(&mut self, model: &Model<'_>) -> Result<()> {
        self.counts = count_transitions(model.dataset, &self.state)?;
        Ok(())
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Runs one full sweep of the sampler.
    pub fn sweep(&mut self, model: &Model<'_>) {
        let Chain { state, counts, rng, seed, parallel, sweeps } = self;
        step1_sample_z(model, state, counts, rng);
        step2_sample_cluster_weights(model.spec, state, rng);
        let aux = step7_sample_auxiliaries(state, counts, rng);
        state.alpha0 = step8_sample_alpha0(&aux, model.hyper, rng);
        state.alpha_re = step9_sample_alpha_re(&aux, model.hyper, rng);
        state.lambda0 = step10_sample_lambda0(&aux, model.hyper, rng);
        {
            let mut streams = if *parallel {
                RowStreams::Substreams { seed: *seed, sweep: *sweeps }
            } else {
                RowStreams::Shared(rng)
            };
            step5_sample_lambda_rand(state, counts, &mut streams);
            step6_sample_lambda_fixed(state, counts, &mut streams);
        }
        step3_sample_v(model, state, counts, rng);
        #[cfg(debug_assertions)]
        {
            let fresh = count_transitions(model.dataset, state).expect("state matches data");
            debug_assert_eq!(&fresh, &*counts, "incremental counts diverged");
        }
        step4_sample_pi0(model.hyper, state, counts, rng);
        *sweeps += 1;
    }
}

/// One retained posterior draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDraw {
    pub iteration: usize,
    pub z: Vec<Vec<usize>>,
    pub pi_cluster: Vec<Vec<f64>>,
    pub pi0: Vec<f64>,
    pub alpha0: f64,
    pub alpha_re: f64,
    pub lambda0: TransitionMatrix,
    pub lambda_fixed: Vec<TransitionMatrix>,
    pub lambda_rand: Vec<TransitionMatrix>,
    /// Number of occupied clusters per predictor.
    pub k_tilde: Vec<usize>,
}

impl TraceDraw {
    pub fn from_state(iteration: usize, state: &ModelState) -> Self {
        TraceDraw {
            iteration,
            z: state.z.clone(),
            pi_cluster: state.pi_cluster.clone(),
            pi0: state.pi0.clone(),
            alpha0: state.alpha0,
            alpha_re: state.alpha_re,
            lambda0: state.lambda0.clone(),
            lambda_fixed: state.lambda_fixed.clone(),
            lambda_rand: state.lambda_rand.clone(),
            k_tilde: (0..state.z.len()).map(|j| state.occupied_clusters(j)).collect(),
        }
    }

    /// Cluster combination of the predictor values `x` under this draw's labels.
    pub fn cluster_of(&self, x: &[usize]) -> usize {
        let combos = Combinations::new(self.pi_cluster.iter().map(Vec::len).collect());
        let digits: Vec<usize> = x.iter().zip(&self.z).map(|(&l, zj)| zj[l]).collect();
        combos.encode(&digits)
    }
}

/// Retained draws of a chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub draws: Vec<TraceDraw>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Runs the sampler from the default initialization and keeps the thinned
/// post-burn-in draws. Deterministic for a given seed.
pub fn run_chain(
    dataset: &SequenceDataset,
    spec: &PredictorSpec,
    hyper: &Hyperparams,
    settings: &McmcSettings,
) -> Result<Trace> {
    settings.validate()?;
    let model = Model::new(dataset, spec, hyper)?;
    let mut chain = Chain::new(&model, settings.seed, settings.parallel)?;
    let mut trace = Trace {
        draws: Vec::with_capacity(settings.retained()),
    };
    for it in 0..settings.iterations {
        chain.sweep(&model);
        if settings.keeps(it) {
            trace.draws.push(TraceDraw::from_state(it, &chain.state));
        }
    }
    debug_assert_eq!(trace.len(), settings.retained());
    Ok(trace)
}
