//! `fit`: a GP on aggregated data, or seasonal coefficient fields on daily
//! data, serialized with run metadata.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::{DMatrix, DVector};
use sunfuse::data::SourceId;
use sunfuse::gp::{fit_gp, FitConfig};
use sunfuse::seasonal::{fit_coeff_field, SeasonalConfig};

use crate::artifact::{out_path, write_csv, write_json};
use crate::config::RunConfig;
use crate::{DataArgs, Globals};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Source to fit: `field`, `simA`, or `simB`.
    #[arg(long)]
    pub source: Option<String>,

    /// Fit the daily seasonal pipeline instead of a GP on time aggregates.
    #[arg(long)]
    pub seasonal: bool,

    /// Output path for the model artifact (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// With --seasonal: coefficient export CSV path.
    #[arg(long, value_name = "FILE")]
    pub coeffs: Option<PathBuf>,

    /// Optimizer restarts.
    #[arg(long)]
    pub n_starts: Option<usize>,

    /// With --seasonal: minimum observations per site.
    #[arg(long)]
    pub min_obs: Option<usize>,
}

pub fn run(args: FitArgs, g: &Globals) -> Result<()> {
    let (ds, data_path, schema) = args.data.load(g)?;
    let source_str: String = g
        .cfg
        .resolve(args.source, "source")?
        .context("--source is required")?;
    let source = SourceId::parse(&source_str)
        .with_context(|| format!("unknown source `{source_str}`"))?;
    let seasonal = g.cfg.resolve_flag(args.seasonal, "seasonal")?;
    let n_starts = g.cfg.resolve(args.n_starts, "n-starts")?.unwrap_or(5);
    let min_obs = g
        .cfg
        .resolve(args.min_obs, "min-obs")?
        .unwrap_or(sunfuse::seasonal::DEFAULT_MIN_OBS);

    let mut rc = RunConfig::new("fit", g.seed, g.jobs, g.out_dir.clone());
    rc.set("data", data_path.display());
    rc.set("schema", &schema);
    rc.set("source", &source_str);
    rc.set("seasonal", seasonal);
    rc.set("n_starts", n_starts);

    let fit_cfg = FitConfig {
        n_starts,
        seed: g.seed,
        ..FitConfig::default()
    };

    if seasonal {
        rc.set("min_obs", min_obs);
        let scfg = SeasonalConfig {
            min_obs,
            fit: fit_cfg,
            ..SeasonalConfig::default()
        };
        let cf = fit_coeff_field(&ds, source, &scfg)?;

        // Coefficient export: raw and smoothed values at the training sites.
        let xt = DMatrix::from_fn(cf.train_sites.len(), 2, |i, c| {
            if c == 0 {
                cf.train_sites[i].lat
            } else {
                cf.train_sites[i].lon
            }
        });
        let cps = cf.coeff_predict(&xt)?;
        let mut body = String::from("lat,lon,k,beta_hat,beta_tilde,var_tilde\n");
        for (i, site) in cf.train_sites.iter().enumerate() {
            for k in 0..3 {
                body.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    site.lat,
                    site.lon,
                    k,
                    cf.beta_hat[i][k],
                    cps[i].coeffs[k].mean,
                    cps[i].coeffs[k].variance
                ));
            }
        }
        let coeff_path = match g.cfg.resolve(args.coeffs, "coeffs")? {
            Some(p) => p,
            None => out_path(&rc, &format!("coeffs_{source}.csv")),
        };
        write_csv(&coeff_path, &rc, &body)?;

        let fields: Vec<serde_json::Value> = cf
            .fields()
            .iter()
            .map(|m| -> Result<serde_json::Value> {
                Ok(serde_json::from_str(&m.to_artifact_json()?)?)
            })
            .collect::<Result<_>>()?;
        let value = serde_json::json!({
            "source": source.to_string(),
            "pooled_resid_var": cf.pooled_resid_var,
            "n_excluded_sites": cf.excluded_sites.len(),
            "coefficient_fields": fields,
        });
        let out = match g.cfg.resolve(args.out, "out")? {
            Some(p) => p,
            None => out_path(&rc, &format!("seasonal_{source}.json")),
        };
        write_json(&out, &rc, "seasonal_model", value)?;
    } else {
        let rep = ds.aggregate_time(source)?;
        let n = rep.means.len();
        let x = DMatrix::from_fn(n, 2, |i, c| {
            if c == 0 {
                rep.means[i].site.lat
            } else {
                rep.means[i].site.lon
            }
        });
        let y = DVector::from_fn(n, |i, _| rep.means[i].mean);
        let model = fit_gp(&x, &y, &fit_cfg)?;
        let artifact: serde_json::Value = serde_json::from_str(&model.to_artifact_json()?)?;
        let out = match g.cfg.resolve(args.out, "out")? {
            Some(p) => p,
            None => out_path(&rc, &format!("model_{source}.json")),
        };
        write_json(&out, &rc, "model", artifact)?;
    }
    Ok(())
}
