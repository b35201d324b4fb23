//! Artifact writing: every output carries the run's metadata header.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use sunfuse::Prediction;

use crate::config::RunConfig;

/// Write a CSV artifact with the metadata header prepended.
pub fn write_csv(path: &Path, rc: &RunConfig, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
        }
    }
    let mut out = rc.header();
    out.push_str(body);
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Write a JSON artifact of the form `{"meta": ..., <key>: <value>}`.
pub fn write_json(
    path: &Path,
    rc: &RunConfig,
    key: &str,
    value: serde_json::Value,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
        }
    }
    let doc = serde_json::json!({ "meta": rc.meta_json(), key: value });
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Resolve an output path inside the run's output directory.
pub fn out_path(rc: &RunConfig, name: &str) -> PathBuf {
    rc.out_dir.join(name)
}

/// Render predictions at points as `lat,lon,mean,var` rows.
pub fn predictions_csv(points: &DMatrix<f64>, preds: &[Prediction]) -> String {
    let mut body = String::from("lat,lon,mean,var\n");
    for (i, p) in preds.iter().enumerate() {
        body.push_str(&format!(
            "{},{},{},{}\n",
            points[(i, 0)],
            points[(i, 1)],
            p.mean,
            p.variance
        ));
    }
    body
}

/// A `lat,lon,mean,var` prediction table read back from CSV.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    pub points: Vec<(f64, f64)>,
    pub preds: Vec<Prediction>,
}

pub fn read_predictions_csv(path: &Path) -> Result<PredictionTable> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening predictions file {}", path.display()))?;
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
    let (li, oi, mi, vi) = (idx("lat")?, idx("lon")?, idx("mean")?, idx("var")?);
    let mut points = Vec::new();
    let mut preds = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .with_context(|| format!("{}: bad number at data row {}", path.display(), row + 1))
        };
        points.push((num(li)?, num(oi)?));
        preds.push(Prediction {
            mean: num(mi)?,
            variance: num(vi)?,
        });
    }
    Ok(PredictionTable { points, preds })
}
