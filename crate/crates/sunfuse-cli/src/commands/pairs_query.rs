//! `pairs-query`: build the service's point-query JSON document.
//!
//! The document format is bit-exact by contract, so this is the one output
//! written without the metadata comment header.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use sunfuse::design::{build_pairs_query, PairsQuery};

use crate::{read_latlon_csv, Globals};

#[derive(Debug, Args)]
pub struct PairsQueryArgs {
    /// Data layer identifier.
    #[arg(long)]
    pub layer: Option<String>,

    /// Interval start, `YYYY-MM-DDTHH:MM:SSZ`.
    #[arg(long)]
    pub start: Option<String>,

    /// Interval end, `YYYY-MM-DDTHH:MM:SSZ`.
    #[arg(long)]
    pub end: Option<String>,

    /// Coordinates CSV with `lat` and `lon` columns (e.g. a design file).
    #[arg(long, value_name = "FILE")]
    pub coords: Option<PathBuf>,

    /// Output path; prints to stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn run(args: PairsQueryArgs, g: &Globals) -> Result<()> {
    let layer: String = g
        .cfg
        .resolve(args.layer, "layer")?
        .context("--layer is required")?;
    let start: String = g
        .cfg
        .resolve(args.start, "start")?
        .context("--start is required")?;
    let end: String = g.cfg.resolve(args.end, "end")?.context("--end is required")?;
    let coords_path: PathBuf = g
        .cfg
        .resolve(args.coords, "coords")?
        .context("--coords is required")?;
    let coords = read_latlon_csv(&coords_path)?;

    let q = PairsQuery {
        layer_id: layer,
        start,
        end,
        coords,
    };
    let doc = build_pairs_query(&q)?;

    match g.cfg.resolve(args.out, "out")? {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(&path, &doc)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{doc}"),
    }
    Ok(())
}
