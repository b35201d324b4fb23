//! `design`: maximin space-filling site selection snapped to the service grid.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use sunfuse::design::{default_candidates, maximin_design, GridSpec, Region};

use crate::artifact::{out_path, write_csv};
use crate::config::RunConfig;
use crate::{parse_region, read_latlon_csv, Globals};

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Number of new locations to select.
    #[arg(long)]
    pub n: Option<usize>,

    /// Existing site CSV with `lat` and `lon` columns.
    #[arg(long, value_name = "FILE")]
    pub existing: Option<PathBuf>,

    /// Bounding box `lat0,lat1,lon0,lon1` (default: continental US).
    #[arg(long)]
    pub region: Option<String>,

    /// Polygon mask CSV (`lat,lon` vertices) to restrict the region.
    #[arg(long, value_name = "FILE")]
    pub polygon: Option<PathBuf>,

    /// Candidate pool size (default 100 per new point).
    #[arg(long)]
    pub candidates: Option<usize>,

    /// Simulate unanswered service requests by marking this many of the
    /// northernmost selected points rejected.
    #[arg(long)]
    pub reject_count: Option<usize>,

    /// Output design CSV (`lat,lon`).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn run(args: DesignArgs, g: &Globals) -> Result<()> {
    let n: usize = g.cfg.resolve(args.n, "n")?.context("--n is required")?;
    let existing_path: Option<PathBuf> = g.cfg.resolve(args.existing, "existing")?;
    let region_spec = g.cfg.resolve(args.region, "region")?;
    let polygon_path: Option<PathBuf> = g.cfg.resolve(args.polygon, "polygon")?;
    let candidates = g
        .cfg
        .resolve(args.candidates, "candidates")?
        .unwrap_or_else(|| default_candidates(n));
    let reject_count = g.cfg.resolve(args.reject_count, "reject-count")?.unwrap_or(0);

    let region = match (&polygon_path, &region_spec) {
        (Some(path), _) => Region::Polygon(read_latlon_csv(path)?),
        (None, Some(spec)) => parse_region(spec)?,
        (None, None) => Region::conus(),
    };
    let existing = match &existing_path {
        Some(p) => read_latlon_csv(p)?,
        None => Vec::new(),
    };

    let mut rc = RunConfig::new("design", g.seed, g.jobs, g.out_dir.clone());
    rc.set("n", n);
    rc.set("candidates", candidates);
    rc.set("reject_count", reject_count);
    if let Some(p) = &existing_path {
        rc.set("existing", p.display());
    }
    if let Some(p) = &polygon_path {
        rc.set("polygon", p.display());
    } else {
        rc.set(
            "region",
            region_spec.clone().unwrap_or_else(|| "24,50,-125,-66".into()),
        );
    }

    let grid = GridSpec::service();
    let result = maximin_design(n, &existing, &region, candidates, g.seed, &grid)?;
    rc.set("achieved_min_dist", result.achieved_min_dist);

    // Simulated rejections: the k northernmost points are marked unanswered.
    let mut order: Vec<usize> = (0..result.points.len()).collect();
    order.sort_by(|&a, &b| {
        result.points[b]
            .0
            .partial_cmp(&result.points[a].0)
            .unwrap()
            .then(a.cmp(&b))
    });
    let rejected: std::collections::BTreeSet<usize> =
        order.into_iter().take(reject_count.min(result.points.len())).collect();

    let mut body = String::from("lat,lon\n");
    let mut rejected_body = String::from("lat,lon\n");
    for (i, (lat, lon)) in result.points.iter().enumerate() {
        if rejected.contains(&i) {
            rejected_body.push_str(&format!("{lat},{lon}\n"));
        } else {
            body.push_str(&format!("{lat},{lon}\n"));
        }
    }

    let out = match g.cfg.resolve(args.out, "out")? {
        Some(p) => p,
        None => out_path(&rc, "design.csv"),
    };
    write_csv(&out, &rc, &body)?;
    if reject_count > 0 {
        let mut rejected_path = out.clone();
        rejected_path.set_extension("rejected.csv");
        write_csv(&rejected_path, &rc, &rejected_body)?;
    }
    Ok(())
}
