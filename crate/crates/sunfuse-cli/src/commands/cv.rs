//! `cv`: leave-one-site-out cross validation over a comparator list, with
//! CSV, aligned-text, and JSON reports.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sunfuse::eval::{
    run_loo_suite, ComparisonReport, Engine, EvalConfig, ModelKind, RefitMode, TimeScale,
};
use sunfuse::gp::FitConfig;

use crate::artifact::{out_path, write_csv};
use crate::config::RunConfig;
use crate::{parse_local, DataArgs, Globals};

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// `aggregate` or `daily`.
    #[arg(long)]
    pub timescale: Option<String>,

    /// Comma-separated comparator labels, or `all` for the full cascade.
    #[arg(long)]
    pub comparators: Option<String>,

    /// Use the local-GP engine, e.g. `n=50,method=nn`.
    #[arg(long, value_name = "SPEC")]
    pub local: Option<String>,

    /// Per-fold hyperparameter treatment: `warm` (default), `full`, or
    /// `fixed` (reuses full-data hyperparameters; a labeled deviation).
    #[arg(long)]
    pub refit: Option<String>,

    /// Minimum observations per site for the daily pipeline.
    #[arg(long)]
    pub min_obs: Option<usize>,

    /// Optimizer restarts for full fits.
    #[arg(long)]
    pub n_starts: Option<usize>,

    /// Baseline report JSON for cross-run p-values.
    #[arg(long, value_name = "FILE")]
    pub baseline: Option<PathBuf>,

    /// Output filename prefix.
    #[arg(long)]
    pub out_prefix: Option<String>,
}

pub fn run(args: CvArgs, g: &Globals) -> Result<()> {
    let (ds, data_path, schema) = args.data.load(g)?;
    let timescale_str = g
        .cfg
        .resolve(args.timescale, "timescale")?
        .unwrap_or_else(|| "aggregate".to_string());
    let timescale = match timescale_str.as_str() {
        "aggregate" => TimeScale::Aggregated,
        "daily" => TimeScale::Daily,
        other => bail!("unknown timescale `{other}` (aggregate or daily)"),
    };
    let comparators_str = g
        .cfg
        .resolve(args.comparators, "comparators")?
        .unwrap_or_else(|| "all".to_string());
    let models: Vec<ModelKind> = if comparators_str == "all" {
        ModelKind::standard_cascade()
    } else {
        comparators_str
            .split(',')
            .map(|s| ModelKind::parse(s.trim()).map_err(anyhow::Error::from))
            .collect::<Result<_>>()?
    };
    let local_spec = g.cfg.resolve(args.local, "local")?;
    let engine = match &local_spec {
        Some(spec) => Engine::Local(parse_local(spec, g.seed)?),
        None => Engine::Global,
    };
    let refit_str = g
        .cfg
        .resolve(args.refit, "refit")?
        .unwrap_or_else(|| "warm".to_string());
    let refit = match refit_str.as_str() {
        "warm" => RefitMode::WarmStart { max_iter: 40 },
        "full" => RefitMode::FullRestarts,
        "fixed" => RefitMode::FixedHyperparams,
        other => bail!("unknown refit mode `{other}` (warm, full, or fixed)"),
    };
    let min_obs = g
        .cfg
        .resolve(args.min_obs, "min-obs")?
        .unwrap_or(sunfuse::seasonal::DEFAULT_MIN_OBS);
    let n_starts = g.cfg.resolve(args.n_starts, "n-starts")?.unwrap_or(5);
    let baseline_path: Option<PathBuf> = g.cfg.resolve(args.baseline, "baseline")?;
    let prefix = g
        .cfg
        .resolve(args.out_prefix, "out-prefix")?
        .unwrap_or_else(|| "cv_report".to_string());

    let mut rc = RunConfig::new("cv", g.seed, g.jobs, g.out_dir.clone());
    rc.set("data", data_path.display());
    rc.set("schema", &schema);
    rc.set("timescale", &timescale_str);
    rc.set(
        "comparators",
        models.iter().map(|m| m.label()).collect::<Vec<_>>().join(","),
    );
    rc.set("refit", &refit_str);
    rc.set("min_obs", min_obs);
    rc.set("n_starts", n_starts);
    if let Some(spec) = &local_spec {
        rc.set("local", spec);
    }
    if let Some(b) = &baseline_path {
        rc.set("baseline", b.display());
    }

    let cfg = EvalConfig {
        engine,
        timescale,
        fit: FitConfig {
            n_starts,
            seed: g.seed,
            ..FitConfig::default()
        },
        min_obs,
        refit,
    };

    let suite = run_loo_suite(&ds, &models, &cfg)?;
    let report = ComparisonReport::from_suite(&suite);

    let baseline_p = match &baseline_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading baseline report {}", path.display()))?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let rep: ComparisonReport = serde_json::from_value(
                doc.get("report")
                    .cloned()
                    .context("baseline JSON lacks a `report` field")?,
            )?;
            Some(report.baseline_p_values(&rep))
        }
        None => None,
    };

    // CSV, with a p_baseline column when a baseline was given.
    let mut csv_body = report.to_csv_string();
    if let Some(bp) = &baseline_p {
        let mut lines: Vec<String> = csv_body.lines().map(|l| l.to_string()).collect();
        lines[0].push_str(",p_baseline");
        for (i, p) in bp.iter().enumerate() {
            lines[i + 1].push_str(&format!(
                ",{}",
                p.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        csv_body = lines.join("\n");
        csv_body.push('\n');
    }
    write_csv(&out_path(&rc, &format!("{prefix}.csv")), &rc, &csv_body)?;

    let mut text = report.to_text_table();
    if let Some(bp) = &baseline_p {
        text.push_str("\nbaseline comparison (one-tailed p, small favors this run):\n");
        for (row, p) in report.rows.iter().zip(bp) {
            text.push_str(&format!(
                "  {:<22} {}\n",
                row.comparator,
                p.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
            ));
        }
    }
    write_csv(&out_path(&rc, &format!("{prefix}.txt")), &rc, &text)?;

    let mut value = serde_json::to_value(&report)?;
    if let Some(bp) = baseline_p {
        value["p_baseline"] = serde_json::to_value(bp)?;
    }
    crate::artifact::write_json(&out_path(&rc, &format!("{prefix}.json")), &rc, "report", value)?;
    Ok(())
}
