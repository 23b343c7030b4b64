use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use memc_core::io;
use memc_core::simulate::{build_scenario, ScenarioId, ScenarioParams};

use crate::{CliError, CliResult, ErrorKind};

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    /// Scenario letter (A-F), repeatable [default: all six].
    #[arg(long = "scenario")]
    pub scenarios: Vec<ScenarioId>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; each scenario gets `<id>/data.csv` and `<id>/truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON overrides; `params` replaces the bundled pseudo-Foxp2 fixture.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    scenarios: Option<Vec<ScenarioId>>,
    seed: Option<u64>,
    params: Option<ScenarioParams>,
    #[allow(dead_code)]
    tool: Option<serde_json::Value>,
    #[allow(dead_code)]
    version: Option<serde_json::Value>,
    #[allow(dead_code)]
    command: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
struct SimulateMeta<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    scenarios: &'a [ScenarioId],
    seed: u64,
    params: &'a ScenarioParams,
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let cfg: SimulateConfig = crate::load_config(args.config.as_deref())?;
    let scenarios = match (&cfg.scenarios, args.scenarios.is_empty()) {
        (Some(s), _) => s.clone(),
        (None, false) => args.scenarios.clone(),
        (None, true) => ScenarioId::ALL.to_vec(),
    };
    let seed = cfg.seed.or(args.seed).unwrap_or(0);
    let params = cfg.params.unwrap_or_else(ScenarioParams::pseudo_foxp2);
    params.validate()?;

    crate::create_dir(&args.out)?;
    for &id in &scenarios {
        let sc = build_scenario(id, &params, seed)?;
        let dir = args.out.join(id.to_string());
        crate::create_dir(&dir)?;
        io::write_dataset(&sc.dataset, dir.join("data.csv")).map_err(|e| CliError {
            kind: ErrorKind::Other,
            message: e.to_string(),
        })?;
        crate::write_json(&sc.truth, &dir.join("truth.json"))?;
        println!(
            "{id}: {} sequences, {} tokens, k_tilde = {:?}",
            sc.dataset.len(),
            sc.dataset.total_tokens(),
            sc.truth.k_tilde
        );
    }
    let meta = SimulateMeta {
        tool: crate::TOOL,
        version: crate::VERSION,
        command: "simulate",
        scenarios: &scenarios,
        seed,
        params: &params,
    };
    crate::write_json(&meta, &args.out.join("meta.json"))
}
