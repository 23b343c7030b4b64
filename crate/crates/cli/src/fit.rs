use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use memc_core::inference::{summarize, test_report, TestReport};
use memc_core::io::{self, DataRef, DatasetSchema, ResultBundle, RunMeta};
use memc_core::{run_chain, Hyperparams, McmcSettings, PredictorSpec};

use crate::{CliError, CliResult, ErrorKind};

/// Prior probability of the single-cluster model used to calibrate `alpha_j`.
const DEFAULT_NULL_PRIOR: f64 = 0.5;

#[derive(Clone, Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV (`sequence_id,subject_id,token,<predictors>...`).
    #[arg(long)]
    pub data: PathBuf,
    /// Total sweeps [default: 5000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sweeps discarded before retention [default: 2000].
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Keep every n-th sweep after burn-in [default: 5].
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Local-test threshold [default: 0.02].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file whose values override the flags; a previous `meta.json` works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the retained draws as CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Draw transition rows in parallel from per-row random streams.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsOverrides {
    iterations: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    parallel: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperOverrides {
    alpha00: Option<f64>,
    lambda00: Option<Vec<f64>>,
    a0: Option<f64>,
    a1: Option<f64>,
    a_alpha0: Option<f64>,
    b_alpha0: Option<f64>,
    a_alpha_re: Option<f64>,
    b_alpha_re: Option<f64>,
    delta: Option<f64>,
}

/// Accepted `--config` keys. The recorded-run keys of `meta.json`
/// (`tool`, `version`, `command`, `data`, `trace`) are read but only `data`
/// is used, to warn when the input file changed.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    delta: Option<f64>,
    parallel: Option<bool>,
    null_prior: Option<f64>,
    settings: Option<SettingsOverrides>,
    hyper: Option<HyperOverrides>,
    spec: Option<PredictorSpec>,
    schema: Option<DatasetSchema>,
    #[allow(dead_code)]
    tool: Option<serde_json::Value>,
    #[allow(dead_code)]
    version: Option<serde_json::Value>,
    #[allow(dead_code)]
    command: Option<serde_json::Value>,
    data: Option<DataRef>,
    #[allow(dead_code)]
    trace: Option<serde_json::Value>,
}

fn resolve_settings(args: &FitArgs, cfg: &FitConfig) -> McmcSettings {
    let d = McmcSettings::default();
    let s = cfg.settings.as_ref();
    McmcSettings {
        iterations: cfg
            .iters
            .or(s.and_then(|s| s.iterations))
            .or(args.iters)
            .unwrap_or(d.iterations),
        burn_in: cfg.burnin.or(s.and_then(|s| s.burn_in)).or(args.burnin).unwrap_or(d.burn_in),
        thin: cfg.thin.or(s.and_then(|s| s.thin)).or(args.thin).unwrap_or(d.thin),
        seed: cfg.seed.or(s.and_then(|s| s.seed)).or(args.seed).unwrap_or(d.seed),
        parallel: cfg.parallel.or(s.and_then(|s| s.parallel)).unwrap_or(args.parallel),
    }
}

fn resolve_hyper(mut hyper: Hyperparams, args: &FitArgs, cfg: &FitConfig) -> Hyperparams {
    if let Some(d) = args.delta {
        hyper.delta = d;
    }
    if let Some(h) = &cfg.hyper {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = h.$f.clone() { hyper.$f = v; } )* };
        }
        take!(alpha00, lambda00, a0, a1, a_alpha0, b_alpha0, a_alpha_re, b_alpha_re, delta);
    }
    if let Some(d) = cfg.delta {
        hyper.delta = d;
    }
    hyper
}

/// Outcome of a fit, as written to `bundle.json`.
pub struct FitOutput {
    pub bundle: ResultBundle,
    pub bundle_path: PathBuf,
}

pub fn run(args: &FitArgs) -> CliResult<FitOutput> {
    let cfg: FitConfig = crate::load_config(args.config.as_deref())?;
    let settings = resolve_settings(args, &cfg);
    settings.validate()?;
    let null_prior = cfg.null_prior.unwrap_or(DEFAULT_NULL_PRIOR);
    if !(null_prior > 0.0 && null_prior < 1.0) {
        return Err(CliError::config(format!("null_prior must lie in (0, 1), got {null_prior}")));
    }

    let schema = cfg.schema.clone().unwrap_or_default();
    let dataset = io::read_dataset(&args.data, &schema)?;
    let data = crate::data_ref(&args.data, &dataset)?;
    crate::check_recorded_hash(cfg.data.as_ref(), &data);

    let spec = match &cfg.spec {
        Some(spec) => spec.clone(),
        None => PredictorSpec::calibrated(dataset.factors(), null_prior),
    };
    spec.validate(dataset.factors())?;
    let hyper = resolve_hyper(Hyperparams::from_dataset(&dataset)?, args, &cfg);
    hyper.validate(dataset.d0())?;

    log::info!(
        "fitting {} sequences ({} transitions), {} sweeps",
        dataset.len(),
        dataset.total_transitions(),
        settings.iterations
    );
    let trace = run_chain(&dataset, &spec, &hyper, &settings)?;
    let summaries = summarize(&trace, &dataset)?;
    let tests = test_report(&trace, dataset.factors(), hyper.delta)?;

    crate::create_dir(&args.out)?;
    if let Some(path) = &args.trace_out {
        io::write_trace_csv(&trace, dataset.states().tokens(), dataset.factors(), path).map_err(other)?;
    }
    let meta = RunMeta {
        tool: crate::TOOL.into(),
        version: crate::VERSION.into(),
        command: "fit".into(),
        data: Some(data),
        settings,
        hyper,
        spec,
        schema: DatasetSchema::of(&dataset),
        trace: args.trace_out.as_ref().map(|p| p.display().to_string()),
    };
    let bundle = ResultBundle {
        meta,
        summaries: Some(summaries),
        tests: Some(tests),
    };
    let bundle_path = args.out.join("bundle.json");
    crate::write_json(&bundle, &bundle_path)?;
    crate::write_json(&bundle.meta, &args.out.join("meta.json"))?;
    io::export_matrix_csvs(&bundle, args.out.join("matrices")).map_err(other)?;
    print!("{}", global_table(bundle.tests.as_ref().expect("set above")));
    Ok(FitOutput { bundle, bundle_path })
}

fn other(e: memc_core::Error) -> CliError {
    CliError {
        kind: ErrorKind::Other,
        message: e.to_string(),
    }
}

/// Plain-text table of `P(k = m | data)` per predictor.
pub fn global_table(tests: &TestReport) -> String {
    let width = tests.global.iter().map(|g| g.predictor.len()).max().unwrap_or(0).max(9);
    let kmax = tests.global.iter().map(|g| g.k_distribution.len()).max().unwrap_or(0);
    let mut out = format!("{:<width$}", "predictor");
    for k in 1..=kmax {
        out.push_str(&format!("  {:>8}", format!("P(k={k})")));
    }
    out.push_str(&format!("  {:>8}\n", "P(H1)"));
    for g in &tests.global {
        out.push_str(&format!("{:<width$}", g.predictor));
        for k in 1..=kmax {
            out.push_str(&format!("  {:>8.4}", g.prob_k(k)));
        }
        out.push_str(&format!("  {:>8.4}\n", g.p_h1));
    }
    out
}
