//! `calibrate`: surrogate plus discrepancy prediction of field values from
//! aggregated field and simulator tables.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::{DMatrix, DVector};
use sunfuse::calibrate::{bias_corrected_predict, fit_bias, EngineCfg, PredictorHandle};
use sunfuse::gp::{fit_gp, FitConfig, Prediction};

use crate::artifact::{out_path, predictions_csv, write_csv};
use crate::config::RunConfig;
use crate::{read_agg_csv, Globals};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Aggregated field table (`site_id,lat,lon,mean`).
    #[arg(long, value_name = "FILE")]
    pub field: Option<PathBuf>,

    /// Aggregated simulator table (`site_id,lat,lon,mean`).
    #[arg(long, value_name = "FILE")]
    pub sim: Option<PathBuf>,

    /// Condition on the simulator values themselves instead of the surrogate.
    #[arg(long)]
    pub true_sim: bool,

    /// Output predictions CSV (`lat,lon,mean,var` at the field sites).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Optimizer restarts.
    #[arg(long)]
    pub n_starts: Option<usize>,
}

pub fn run(args: CalibrateArgs, g: &Globals) -> Result<()> {
    let field_path: PathBuf = g
        .cfg
        .resolve(args.field, "field")?
        .context("--field is required")?;
    let sim_path: PathBuf = g.cfg.resolve(args.sim, "sim")?.context("--sim is required")?;
    let true_sim = g.cfg.resolve_flag(args.true_sim, "true-sim")?;
    let n_starts = g.cfg.resolve(args.n_starts, "n-starts")?.unwrap_or(5);

    let field = read_agg_csv(&field_path)?;
    let sim = read_agg_csv(&sim_path)?;
    if field.is_empty() || sim.is_empty() {
        bail!("calibration inputs must be nonempty");
    }

    let mut rc = RunConfig::new("calibrate", g.seed, g.jobs, g.out_dir.clone());
    rc.set("field", field_path.display());
    rc.set("sim", sim_path.display());
    rc.set("true_sim", true_sim);
    rc.set("n_starts", n_starts);

    let fx = DMatrix::from_fn(field.len(), 2, |i, c| {
        if c == 0 {
            field[i].0.lat
        } else {
            field[i].0.lon
        }
    });
    let fy = DVector::from_fn(field.len(), |i, _| field[i].1);

    let sx = DMatrix::from_fn(sim.len(), 2, |i, c| {
        if c == 0 {
            sim[i].0.lat
        } else {
            sim[i].0.lon
        }
    });
    let sy = DVector::from_fn(sim.len(), |i, _| sim[i].1);

    let surr_cfg = FitConfig {
        n_starts,
        seed: g.seed,
        ..FitConfig::default()
    };
    let disc_cfg = FitConfig {
        n_starts,
        seed: g.seed ^ 0x9e37_79b9,
        ..FitConfig::default()
    };
    let surrogate = PredictorHandle::Global(fit_gp(&sx, &sy, &surr_cfg)?);

    let preds = if true_sim {
        // Residuals against actual simulator values at the field sites.
        let by_id: BTreeMap<&str, f64> = sim.iter().map(|(s, v)| (s.id.as_str(), *v)).collect();
        let mut vals = Vec::with_capacity(field.len());
        let mut missing = Vec::new();
        for (s, _) in &field {
            match by_id.get(s.id.as_str()) {
                Some(v) => vals.push(*v),
                None => missing.push(s.id.clone()),
            }
        }
        if !missing.is_empty() {
            bail!(
                "--true-sim requires simulator values at every field site; missing: {}",
                missing.join(", ")
            );
        }
        let sim_preds: Vec<Prediction> = vals
            .iter()
            .map(|&v| Prediction {
                mean: v,
                variance: 0.0,
            })
            .collect();
        let bm = fit_bias(surrogate, &fx, &fy, &sim_preds, &EngineCfg::Global(disc_cfg))?;
        bias_corrected_predict(&bm, &fx, Some(&vals))?
    } else {
        let sim_preds = surrogate.predict(&fx, false)?;
        let bm = fit_bias(surrogate, &fx, &fy, &sim_preds, &EngineCfg::Global(disc_cfg))?;
        bias_corrected_predict(&bm, &fx, None)?
    };

    let out = match g.cfg.resolve(args.out, "out")? {
        Some(p) => p,
        None => out_path(&rc, "calibrated.csv"),
    };
    write_csv(&out, &rc, &predictions_csv(&fx, &preds))?;
    Ok(())
}
