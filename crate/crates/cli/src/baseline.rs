use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use memc_core::baseline::{local_tests, per_sequence_mle, permutation_global_test, BaselineLocal, PermutationTest};
use memc_core::io::{self, DataRef, DatasetSchema};

use crate::CliResult;

const DEFAULT_PERMUTATIONS: usize = 999;

#[derive(Clone, Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Seed of the permutation test.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Permutation replicates per predictor [default: 999].
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineConfig {
    seed: Option<u64>,
    permutations: Option<usize>,
    schema: Option<DatasetSchema>,
    #[allow(dead_code)]
    tool: Option<serde_json::Value>,
    #[allow(dead_code)]
    version: Option<serde_json::Value>,
    #[allow(dead_code)]
    command: Option<serde_json::Value>,
    data: Option<DataRef>,
}

#[derive(Debug, Serialize)]
struct BaselineMeta {
    tool: String,
    version: String,
    command: String,
    data: DataRef,
    seed: u64,
    permutations: usize,
    schema: DatasetSchema,
}

/// Comparator results for one predictor.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictorBaseline {
    pub name: String,
    pub levels: Vec<String>,
    /// Absent when the predictor has a single level.
    pub permutation: Option<PermutationTest>,
    pub local: Vec<BaselineLocal>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineReport {
    pub states: Vec<String>,
    pub predictors: Vec<PredictorBaseline>,
}

pub fn run(args: &BaselineArgs) -> CliResult<()> {
    let cfg: BaselineConfig = crate::load_config(args.config.as_deref())?;
    let seed = cfg.seed.or(args.seed).unwrap_or(0);
    let permutations = cfg.permutations.or(args.permutations).unwrap_or(DEFAULT_PERMUTATIONS);
    let dataset = io::read_dataset(&args.data, &cfg.schema.clone().unwrap_or_default())?;
    let data = crate::data_ref(&args.data, &dataset)?;
    crate::check_recorded_hash(cfg.data.as_ref(), &data);

    let est = per_sequence_mle(&dataset);
    let mut predictors = Vec::new();
    for (j, f) in dataset.factors().iter().enumerate() {
        let permutation = if f.len() >= 2 {
            Some(permutation_global_test(&est, j, permutations, seed)?)
        } else {
            None
        };
        predictors.push(PredictorBaseline {
            name: f.name.clone(),
            levels: f.levels.clone(),
            permutation,
            local: local_tests(&est, j)?,
        });
    }
    let report = BaselineReport {
        states: dataset.states().tokens().to_vec(),
        predictors,
    };

    crate::create_dir(&args.out)?;
    crate::write_json(&report, &args.out.join("baseline.json"))?;
    let meta = BaselineMeta {
        tool: crate::TOOL.into(),
        version: crate::VERSION.into(),
        command: "baseline".into(),
        data,
        seed,
        permutations,
        schema: DatasetSchema::of(&dataset),
    };
    crate::write_json(&meta, &args.out.join("meta.json"))?;

    println!("{:<12}  {:>12}  {:>8}  {:>8}", "predictor", "scheme", "min p_adj", "p");
    for p in &report.predictors {
        if let Some(t) = &p.permutation {
            println!(
                "{:<12}  {:>12}  {:>8.4}  {:>8.4}",
                p.name,
                format!("{:?}", t.scheme),
                t.observed,
                t.p_value
            );
        }
    }
    Ok(())
}
