//! Shared inputs for the benchmarks.

use memc_core::simulate::{build_scenario, ScenarioId, ScenarioParams};
use memc_core::{Hyperparams, PredictorSpec, SequenceDataset};

/// A scenario dataset from the bundled fixture with default priors.
pub fn scenario(id: ScenarioId, seed: u64) -> (SequenceDataset, PredictorSpec, Hyperparams) {
    let sc = build_scenario(id, &ScenarioParams::pseudo_foxp2(), seed).expect("bundled fixture is valid");
    let spec = PredictorSpec::calibrated(sc.dataset.factors(), 0.5);
    let hyper = Hyperparams::from_dataset(&sc.dataset).expect("scenario data is non-empty");
    (sc.dataset, spec, hyper)
}
