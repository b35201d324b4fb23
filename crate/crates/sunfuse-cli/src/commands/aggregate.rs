//! `aggregate`: per-site time averages per source plus a data-quality report.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use sunfuse::data::SourceId;

use crate::artifact::{out_path, write_csv};
use crate::config::RunConfig;
use crate::{DataArgs, Globals};

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Source to aggregate: `field`, `simA`, `simB`, or `all`.
    #[arg(long)]
    pub source: Option<String>,

    /// Path for the exclusion/data-quality report CSV.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

pub fn run(args: AggregateArgs, g: &Globals) -> Result<()> {
    let (ds, data_path, schema) = args.data.load(g)?;
    let source_str = g
        .cfg
        .resolve(args.source, "source")?
        .unwrap_or_else(|| "all".to_string());
    let sources: Vec<SourceId> = match source_str.as_str() {
        "all" => SourceId::ALL.to_vec(),
        s => vec![SourceId::parse(s)
            .ok_or_else(|| anyhow::anyhow!("unknown source `{s}`"))?],
    };

    let mut rc = RunConfig::new("aggregate", g.seed, g.jobs, g.out_dir.clone());
    rc.set("data", data_path.display());
    rc.set("schema", &schema);
    rc.set("source", &source_str);

    let mut quality = String::from("kind,site_id,lat,lon,day,source\n");
    for source in &sources {
        let rep = ds.aggregate_time(*source)?;
        if rep.means.is_empty() {
            bail!("no site has observations for source {source}");
        }
        let mut body = String::from("site_id,lat,lon,mean,n_days\n");
        for m in &rep.means {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                m.site.id, m.site.lat, m.site.lon, m.mean, m.n_days
            ));
        }
        write_csv(&out_path(&rc, &format!("aggregate_{source}.csv")), &rc, &body)?;

        for s in &rep.excluded {
            quality.push_str(&format!(
                "excluded_no_data,{},{},{},,{source}\n",
                s.id, s.lat, s.lon
            ));
        }
        for (s, day) in &rep.zero_values {
            quality.push_str(&format!(
                "zero_value,{},{},{},{day},{source}\n",
                s.id, s.lat, s.lon
            ));
        }
    }

    let report_path = match g.cfg.resolve(args.report, "report")? {
        Some(p) => p,
        None => out_path(&rc, "data_quality.csv"),
    };
    write_csv(&report_path, &rc, &quality)?;
    Ok(())
}
