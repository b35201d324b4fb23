//! `predict-grid`: run one comparator over a lat/lon grid, either on time
//! aggregates (one file) or per day (one file per day).

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::DMatrix;
use rayon::prelude::*;
use sunfuse::eval::{fit_comparator, Engine, EvalConfig, ModelKind, RefitMode, TimeScale};
use sunfuse::gp::{FitConfig, Prediction};

use crate::artifact::{out_path, write_csv};
use crate::config::RunConfig;
use crate::{grid_points, parse_local, parse_region, DataArgs, Globals};

#[derive(Debug, Args)]
pub struct PredictGridArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Comparator label (e.g. `ivw`, `surrogate-bias:simA`).
    #[arg(long)]
    pub comparator: Option<String>,

    /// `aggregate` or `daily`.
    #[arg(long)]
    pub timescale: Option<String>,

    /// Bounding box `lat0,lat1,lon0,lon1` (default: continental US).
    #[arg(long)]
    pub region: Option<String>,

    /// Grid resolution in degrees.
    #[arg(long)]
    pub res: Option<f64>,

    /// Day range `start..end` (end exclusive) for daily predictions; one
    /// output file per day.
    #[arg(long)]
    pub days: Option<String>,

    /// Use the local-GP engine, e.g. `n=50,method=nn`.
    #[arg(long, value_name = "SPEC")]
    pub local: Option<String>,

    /// Optimizer restarts.
    #[arg(long)]
    pub n_starts: Option<usize>,

    /// Minimum observations per site for the daily pipeline.
    #[arg(long)]
    pub min_obs: Option<usize>,

    /// Output CSV path (aggregated runs only).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn run(args: PredictGridArgs, g: &Globals) -> Result<()> {
    let (ds, data_path, schema) = args.data.load(g)?;
    let comparator_str: String = g
        .cfg
        .resolve(args.comparator, "comparator")?
        .context("--comparator is required")?;
    let model = ModelKind::parse(&comparator_str)?;
    let timescale_str = g
        .cfg
        .resolve(args.timescale, "timescale")?
        .unwrap_or_else(|| "aggregate".to_string());
    let timescale = match timescale_str.as_str() {
        "aggregate" => TimeScale::Aggregated,
        "daily" => TimeScale::Daily,
        other => bail!("unknown timescale `{other}`"),
    };
    let region_spec = g
        .cfg
        .resolve(args.region, "region")?
        .unwrap_or_else(|| "24,50,-125,-66".to_string());
    let region = parse_region(&region_spec)?;
    let res: f64 = g.cfg.resolve(args.res, "res")?.context("--res is required")?;
    let days_spec: Option<String> = g.cfg.resolve(args.days, "days")?;
    let local_spec = g.cfg.resolve(args.local, "local")?;
    let n_starts = g.cfg.resolve(args.n_starts, "n-starts")?.unwrap_or(5);
    let min_obs = g
        .cfg
        .resolve(args.min_obs, "min-obs")?
        .unwrap_or(sunfuse::seasonal::DEFAULT_MIN_OBS);

    let engine = match &local_spec {
        Some(spec) => Engine::Local(parse_local(spec, g.seed)?),
        None => Engine::Global,
    };

    let mut rc = RunConfig::new("predict-grid", g.seed, g.jobs, g.out_dir.clone());
    rc.set("data", data_path.display());
    rc.set("schema", &schema);
    rc.set("comparator", &comparator_str);
    rc.set("timescale", &timescale_str);
    rc.set("region", &region_spec);
    rc.set("res", res);
    rc.set("n_starts", n_starts);
    if let Some(spec) = &local_spec {
        rc.set("local", spec);
    }
    if let Some(d) = &days_spec {
        rc.set("days", d);
    }
    if matches!(timescale, TimeScale::Daily) {
        rc.set("min_obs", min_obs);
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
        refit: RefitMode::FullRestarts,
    };
    let trained = fit_comparator(&ds, model, &cfg)?;

    let pts = grid_points(&region, res)?;
    let pts_mat = DMatrix::from_fn(pts.len(), 2, |i, c| if c == 0 { pts[i].0 } else { pts[i].1 });

    let predict_day = |day: Option<u32>| -> Result<Vec<Prediction>> {
        // Chunked parallel prediction; chunk results are concatenated in
        // order so output does not depend on thread count.
        let chunk = 256;
        let ranges: Vec<(usize, usize)> = (0..pts.len())
            .step_by(chunk)
            .map(|s| (s, (s + chunk).min(pts.len())))
            .collect();
        let parts: Vec<Vec<Prediction>> = ranges
            .par_iter()
            .map(|&(s, e)| {
                let sub = pts_mat.rows(s, e - s).into_owned();
                trained.predict(&sub, day).map_err(anyhow::Error::from)
            })
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    };

    match timescale {
        TimeScale::Aggregated => {
            if days_spec.is_some() {
                bail!("--days applies to the daily timescale only");
            }
            let preds = predict_day(None)?;
            let out = match g.cfg.resolve(args.out, "out")? {
                Some(p) => p,
                None => out_path(&rc, "grid.csv"),
            };
            write_csv(&out, &rc, &crate::artifact::predictions_csv(&pts_mat, &preds))?;
        }
        TimeScale::Daily => {
            let spec = days_spec.context("daily predictions require --days start..end")?;
            let (a, b) = spec
                .split_once("..")
                .with_context(|| format!("--days expects start..end, got `{spec}`"))?;
            let start: u32 = a.trim().parse().context("--days start")?;
            let end: u32 = b.trim().parse().context("--days end")?;
            if end <= start {
                bail!("--days range is empty");
            }
            for day in start..end {
                let preds = predict_day(Some(day))?;
                let out = out_path(&rc, &format!("pred_day_{day:03}.csv"));
                write_csv(&out, &rc, &crate::artifact::predictions_csv(&pts_mat, &preds))?;
            }
        }
    }
    Ok(())
}
