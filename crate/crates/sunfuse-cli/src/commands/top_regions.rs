//! `top-regions`: sunniest-location summaries over a full year of daily
//! grid predictions.
//!
//! For each grid point: the fraction of days its predictive mean ranks in
//! the top decile of that day's means, and the fraction of days it sits in
//! the upper quartile with its 90% interval's lower bound above the lower
//! quartile of means.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use crate::artifact::{out_path, read_predictions_csv, write_csv};
use crate::config::RunConfig;
use crate::Globals;

/// Lower bound multiplier of a two-sided 90% Gaussian interval.
const Z90: f64 = 1.644854;

#[derive(Debug, Args)]
pub struct TopRegionsArgs {
    /// Directory holding `pred_day_000.csv` through `pred_day_364.csv`.
    #[arg(long, value_name = "DIR")]
    pub pred_dir: Option<PathBuf>,

    /// Output summary CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Linear-interpolation quantile of already sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn run(args: TopRegionsArgs, g: &Globals) -> Result<()> {
    let dir: PathBuf = g
        .cfg
        .resolve(args.pred_dir, "pred-dir")?
        .context("--pred-dir is required")?;

    let mut rc = RunConfig::new("top-regions", g.seed, g.jobs, g.out_dir.clone());
    rc.set("pred_dir", dir.display());

    let mut points: Option<Vec<(f64, f64)>> = None;
    let mut top_decile_days = Vec::new();
    let mut confident_days = Vec::new();

    for day in 0..365u32 {
        let path = dir.join(format!("pred_day_{day:03}.csv"));
        if !path.exists() {
            bail!(
                "incomplete year: {} is missing (need days 0..=364)",
                path.display()
            );
        }
        let table = read_predictions_csv(&path)?;
        match &points {
            None => {
                points = Some(table.points.clone());
                top_decile_days = vec![0u32; table.points.len()];
                confident_days = vec![0u32; table.points.len()];
            }
            Some(p) => {
                if *p != table.points {
                    bail!("{} covers different grid points than day 0", path.display());
                }
            }
        }

        let mut means: Vec<f64> = table.preds.iter().map(|p| p.mean).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q90 = quantile_sorted(&means, 0.90);
        let q75 = quantile_sorted(&means, 0.75);
        let q25 = quantile_sorted(&means, 0.25);

        for (i, p) in table.preds.iter().enumerate() {
            if p.mean >= q90 {
                top_decile_days[i] += 1;
            }
            let lower = p.mean - Z90 * p.variance.max(0.0).sqrt();
            if p.mean >= q75 && lower >= q25 {
                confident_days[i] += 1;
            }
        }
    }

    let points = points.expect("at least one day");
    let mut body = String::from("lat,lon,frac_top_decile,frac_upper_quartile_confident\n");
    for (i, (lat, lon)) in points.iter().enumerate() {
        body.push_str(&format!(
            "{},{},{},{}\n",
            lat,
            lon,
            top_decile_days[i] as f64 / 365.0,
            confident_days[i] as f64 / 365.0
        ));
    }

    let out = match g.cfg.resolve(args.out, "out")? {
        Some(p) => p,
        None => out_path(&rc, "top_regions.csv"),
    };
    write_csv(&out, &rc, &body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&[7.0], 0.9), 7.0);
    }
}
