//! `fuse`: inverse-variance combination of aligned prediction files.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sunfuse::calibrate::ivw_fuse;
use sunfuse::Prediction;

use crate::artifact::{out_path, read_predictions_csv, write_csv};
use crate::config::RunConfig;
use crate::Globals;

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Prediction CSVs (`lat,lon,mean,var`), all over the same points.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub inputs: Vec<PathBuf>,

    /// Output CSV for the fused predictions.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn run(args: FuseArgs, g: &Globals) -> Result<()> {
    let inputs: Vec<PathBuf> = if args.inputs.is_empty() {
        match g.cfg.get("inputs") {
            Some(s) => s.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            None => Vec::new(),
        }
    } else {
        args.inputs
    };
    if inputs.is_empty() {
        bail!("--inputs requires at least one prediction file");
    }

    let mut rc = RunConfig::new("fuse", g.seed, g.jobs, g.out_dir.clone());
    rc.set(
        "inputs",
        inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );

    let tables: Vec<_> = inputs
        .iter()
        .map(|p| read_predictions_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;

    let key = |p: &(f64, f64)| (p.0.to_bits(), p.1.to_bits());
    let base: BTreeSet<_> = tables[0].points.iter().map(key).collect();
    for (t, path) in tables.iter().zip(&inputs).skip(1) {
        let pts: BTreeSet<_> = t.points.iter().map(key).collect();
        if pts != base {
            bail!(
                "{} covers different points than {} ({} vs {} rows)",
                path.display(),
                inputs[0].display(),
                t.points.len(),
                tables[0].points.len()
            );
        }
    }

    // Index every table by point; emit in the first file's row order.
    let lookups: Vec<std::collections::BTreeMap<(u64, u64), Prediction>> = tables
        .iter()
        .map(|t| {
            t.points
                .iter()
                .map(key)
                .zip(t.preds.iter().copied())
                .collect()
        })
        .collect();

    let mut body = String::from("lat,lon,mean,var\n");
    for (i, pt) in tables[0].points.iter().enumerate() {
        let comps: Vec<Prediction> = lookups.iter().map(|l| l[&key(pt)]).collect();
        let fused = ivw_fuse(&comps)?;
        let _ = i;
        body.push_str(&format!("{},{},{},{}\n", pt.0, pt.1, fused.mean, fused.variance));
    }

    let out = match g.cfg.resolve(args.out, "out")? {
        Some(p) => p,
        None => out_path(&rc, "fused.csv"),
    };
    write_csv(&out, &rc, &body)?;
    Ok(())
}
