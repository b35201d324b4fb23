//! Command-line driver: ingestion, fitting, calibration, fusion, design,
//! grid prediction, and cross-validated evaluation runs from one
//! configuration.

pub mod artifact;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ConfigMap;

#[derive(Debug, Parser)]
#[command(
    name = "sunfuse",
    about = "Surrogate modeling, bias correction, and fusion for solar irradiance data",
    version
)]
pub struct Cli {
    /// RNG seed recorded in every artifact.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (0 or absent = library default).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Directory for output artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Key-value config file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-site time averages for each source, with a data-quality report.
    Aggregate(commands::aggregate::AggregateArgs),
    /// Fit a GP to aggregated data, or seasonal coefficient fields to daily data.
    Fit(commands::fit::FitArgs),
    /// Bias-correct a simulator against field data and write predictions.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Inverse-variance fusion of prediction files.
    Fuse(commands::fuse::FuseArgs),
    /// Leave-one-site-out cross validation over a comparator list.
    Cv(commands::cv::CvArgs),
    /// Maximin space-filling design snapped to the service grid.
    Design(commands::design::DesignArgs),
    /// Run a comparator over a lat/lon grid.
    PredictGrid(commands::predict_grid::PredictGridArgs),
    /// Sunniest-region summaries from a year of daily grid predictions.
    TopRegions(commands::top_regions::TopRegionsArgs),
    /// Build a point-query document for the simulation data service.
    PairsQuery(commands::pairs_query::PairsQueryArgs),
}

/// Resolved global flags shared by all commands.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub cfg: ConfigMap,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let globals = Globals {
        seed: cfg.resolve(cli.seed, "seed")?.unwrap_or(0),
        jobs: cfg.resolve(cli.jobs, "jobs")?.unwrap_or(0),
        out_dir: cfg
            .resolve(cli.out_dir, "out-dir")?
            .unwrap_or_else(|| PathBuf::from(".")),
        cfg,
    };

    let dispatch = || -> Result<()> {
        match cli.command {
            Command::Aggregate(a) => commands::aggregate::run(a, &globals),
            Command::Fit(a) => commands::fit::run(a, &globals),
            Command::Calibrate(a) => commands::calibrate::run(a, &globals),
            Command::Fuse(a) => commands::fuse::run(a, &globals),
            Command::Cv(a) => commands::cv::run(a, &globals),
            Command::Design(a) => commands::design::run(a, &globals),
            Command::PredictGrid(a) => commands::predict_grid::run(a, &globals),
            Command::TopRegions(a) => commands::top_regions::run(a, &globals),
            Command::PairsQuery(a) => commands::pairs_query::run(a, &globals),
        }
    };

    if globals.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(globals.jobs)
            .build()
            .context("building worker pool")?;
        pool.install(dispatch)
    } else {
        dispatch()
    }
}

/// Common input flags for commands reading a station dataset.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV of station observations.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Input layout: `long` or `wide`.
    #[arg(long)]
    pub schema: Option<String>,
}

impl DataArgs {
    pub fn load(&self, g: &Globals) -> Result<(sunfuse::data::Dataset, PathBuf, String)> {
        let path: PathBuf = g
            .cfg
            .resolve(self.data.clone(), "data")?
            .context("--data is required")?;
        let path = path
            .canonicalize()
            .with_context(|| format!("input path {}", path.display()))?;
        let schema_str = g
            .cfg
            .resolve(self.schema.clone(), "schema")?
            .unwrap_or_else(|| "long".to_string());
        let schema = sunfuse::data::Schema::parse(&schema_str)
            .with_context(|| format!("unknown schema `{schema_str}`"))?;
        let ds = sunfuse::data::Dataset::load_csv(&path, schema)?;
        Ok((ds, path, schema_str))
    }
}

/// Parse `--local n=50,method=nn` into a local-GP configuration.
pub fn parse_local(spec: &str, seed: u64) -> Result<sunfuse::localgp::LocalConfig> {
    let mut cfg = sunfuse::localgp::LocalConfig::default();
    cfg.fit.seed = seed;
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            bail!("--local expects n=<int>,method=<nn|alc>, got `{part}`");
        };
        match k.trim() {
            "n" => cfg.n = v.trim().parse().context("--local n")?,
            "n_start" => cfg.n_start = v.trim().parse().context("--local n_start")?,
            "method" => {
                cfg.method = sunfuse::localgp::SelectionMethod::parse(v.trim())
                    .with_context(|| format!("unknown local method `{v}`"))?
            }
            other => bail!("unknown --local key `{other}`"),
        }
    }
    Ok(cfg)
}

/// Parse `lat0,lat1,lon0,lon1` into a box region.
pub fn parse_region(spec: &str) -> Result<sunfuse::design::Region> {
    let nums: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("region `{spec}`"))?;
    if nums.len() != 4 {
        bail!("region expects lat0,lat1,lon0,lon1");
    }
    Ok(sunfuse::design::Region::Box {
        lat: (nums[0], nums[1]),
        lon: (nums[2], nums[3]),
    })
}

/// Read a CSV with `lat` and `lon` columns (other columns ignored).
pub fn read_latlon_csv(path: &std::path::Path) -> Result<Vec<(f64, f64)>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let li = headers
        .iter()
        .position(|h| h == "lat")
        .with_context(|| format!("{}: missing `lat` column", path.display()))?;
    let oi = headers
        .iter()
        .position(|h| h == "lon")
        .with_context(|| format!("{}: missing `lon` column", path.display()))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .with_context(|| format!("{}: bad number at data row {}", path.display(), row + 1))
        };
        out.push((num(li)?, num(oi)?));
    }
    Ok(out)
}

/// Read an aggregated table `site_id,lat,lon,mean[,...]`.
pub fn read_agg_csv(path: &std::path::Path) -> Result<Vec<(sunfuse::data::Site, f64)>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (si, li, oi, mi) = (idx("site_id")?, idx("lat")?, idx("lon")?, idx("mean")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| -> Result<&str> {
            rec.get(i)
                .with_context(|| format!("{}: short row {}", path.display(), row + 1))
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?
                .parse::<f64>()
                .with_context(|| format!("{}: bad number at data row {}", path.display(), row + 1))
        };
        let site = sunfuse::data::Site::new(get(si)?.to_string(), num(li)?, num(oi)?)?;
        out.push((site, num(mi)?));
    }
    Ok(out)
}

/// Grid of points over a box at the given resolution, latitude-major.
pub fn grid_points(region: &sunfuse::design::Region, res: f64) -> Result<Vec<(f64, f64)>> {
    let ((lat0, lat1), (lon0, lon1)) = region.bounding_box();
    if !(res > 0.0) {
        bail!("grid resolution must be positive");
    }
    let mut pts = Vec::new();
    let n_lat = ((lat1 - lat0) / res).floor() as usize + 1;
    let n_lon = ((lon1 - lon0) / res).floor() as usize + 1;
    for i in 0..n_lat {
        let lat = lat0 + i as f64 * res;
        for j in 0..n_lon {
            let lon = lon0 + j as f64 * res;
            if region.contains((lat, lon)) {
                pts.push((lat, lon));
            }
        }
    }
    if pts.is_empty() {
        bail!("grid over {region:?} at {res} degrees has no points");
    }
    Ok(pts)
}
