use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use memc_core::io::{self, export_heatmap_svg, ResultBundle};
use memc_core::Factor;

use crate::{CliError, CliResult, ErrorKind};

#[derive(Clone, Debug, Args)]
pub struct ReportArgs {
    /// `bundle.json` written by `fit`.
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ReportMeta {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    bundle: String,
    sha256: String,
}

fn other(e: memc_core::Error) -> CliError {
    CliError {
        kind: ErrorKind::Other,
        message: e.to_string(),
    }
}

fn context_tag(factors: &[Factor], skip: usize, context: &[usize]) -> String {
    let parts: Vec<String> = factors
        .iter()
        .zip(context)
        .enumerate()
        .filter(|(k, _)| *k != skip)
        .map(|(_, (f, &l))| format!("{}={}", f.name, f.levels[l]))
        .collect();
    if parts.is_empty() {
        "all".into()
    } else {
        parts.join(",")
    }
}

/// Writes heatmaps and tables for a bundle; returns the written paths.
pub fn render(bundle: &ResultBundle, out: &Path) -> CliResult<Vec<PathBuf>> {
    crate::create_dir(out)?;
    let mut written = io::export_matrix_csvs(bundle, out.join("matrices")).map_err(other)?;
    let factors = bundle.meta.schema.predictors.clone().unwrap_or_default();
    if let Some(s) = &bundle.summaries {
        for c in &s.transitions {
            let tag = c.levels.join("_");
            let path = out.join(format!("mean_{tag}.svg"));
            let title = format!("posterior mean transition matrix, {}", c.levels.join(", "));
            export_heatmap_svg(&c.mean, &s.states, &s.states, &title, &path).map_err(other)?;
            written.push(path);
        }
        let path = out.join("random_effects.svg");
        export_heatmap_svg(
            &s.random_effects.pooled,
            &s.states,
            &s.states,
            "pooled random-effect standard deviation",
            &path,
        )
        .map_err(other)?;
        written.push(path);
    }
    if let Some(t) = &bundle.tests {
        let states = bundle.summaries.as_ref().map(|s| s.states.clone()).unwrap_or_else(|| {
            bundle.meta.schema.tokens.clone().unwrap_or_default()
        });
        for l in &t.local {
            let f = &factors[l.predictor];
            let ctx = context_tag(&factors, l.predictor, &l.context);
            let name = format!("local_{}_{}_vs_{}_{}.svg", f.name, f.levels[l.level_a], f.levels[l.level_b], ctx);
            let title = format!(
                "P(|difference| <= {}), {} {} vs {} at {}",
                t.delta, f.name, f.levels[l.level_a], f.levels[l.level_b], ctx
            );
            let path = out.join(name.replace(['/', '\\', ' '], "_"));
            export_heatmap_svg(&l.p_h0, &states, &states, &title, &path).map_err(other)?;
            written.push(path);
        }
        let path = out.join("global_tests.txt");
        std::fs::write(&path, crate::fit::global_table(t)).map_err(|e| CliError {
            kind: ErrorKind::Other,
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        written.push(path);
    }
    Ok(written)
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let bundle = io::read_summary(&args.bundle)?;
    let written = render(&bundle, &args.out)?;
    let meta = ReportMeta {
        tool: crate::TOOL,
        version: crate::VERSION,
        command: "report",
        bundle: args.bundle.display().to_string(),
        sha256: crate::sha256_file(&args.bundle)?,
    };
    crate::write_json(&meta, &args.out.join("meta.json"))?;
    println!("wrote {} files to {}", written.len(), args.out.display());
    Ok(())
}
