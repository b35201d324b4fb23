//! Ingestion and views of the three co-located data sources.
//!
//! A [`Dataset`] holds per-site, per-day irradiance observations for the
//! field sensors and the two simulators, with explicit missingness. Cells
//! that are absent or empty in the input stay missing; nothing is imputed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Which of the three co-located sources an observation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceId {
    Field,
    SimA,
    SimB,
}

impl SourceId {
    pub const ALL: [SourceId; 3] = [SourceId::Field, SourceId::SimA, SourceId::SimB];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceId::Field => "field",
            SourceId::SimA => "simA",
            SourceId::SimB => "simB",
        }
    }

    pub fn parse(s: &str) -> Option<SourceId> {
        match s {
            "field" => Some(SourceId::Field),
            "simA" => Some(SourceId::SimA),
            "simB" => Some(SourceId::SimB),
            _ => None,
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A measurement station: opaque id plus geographic coordinates in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Site {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidParam(format!("latitude {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidParam(format!("longitude {lon} out of range")));
        }
        Ok(Site {
            id: id.into(),
            lat,
            lon,
        })
    }
}

/// Input file layout for [`Dataset::load_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// Header `site_id,lat,lon,day,source,value`; one source per row.
    Long,
    /// Header `site_id,lat,lon,day,field,simA,simB`; one day per row.
    Wide,
}

impl Schema {
    pub fn parse(s: &str) -> Option<Schema> {
        match s {
            "long" => Some(Schema::Long),
            "wide" => Some(Schema::Wide),
            _ => None,
        }
    }
}

/// Immutable collection of per-site, per-day observations for all sources.
///
/// Cells explicitly present in the input with an empty value are recorded
/// as missing; cells never mentioned are equally missing for all queries.
#[derive(Debug, Clone)]
pub struct Dataset {
    sites: Vec<Site>,
    site_index: HashMap<String, usize>,
    obs: BTreeMap<(usize, u32, SourceId), Option<f64>>,
    day_range: (u32, u32),
}

/// Per-site mean for one source, produced by [`Dataset::aggregate_time`].
#[derive(Debug, Clone)]
pub struct SiteMean {
    pub site: Site,
    pub mean: f64,
    pub n_days: usize,
}

/// Result of time aggregation: means, excluded sites, and data-quality flags.
#[derive(Debug, Clone)]
pub struct AggregateReport {
    pub means: Vec<SiteMean>,
    /// Sites with zero non-missing observations for the requested source.
    pub excluded: Vec<Site>,
    /// Observations equal to exactly zero, flagged for review (site, day).
    pub zero_values: Vec<(Site, u32)>,
}

impl Dataset {
    /// Build a dataset from sites and sparse observations.
    ///
    /// `observations` yields `(site_id, day, source, value)`; `None` records
    /// an explicitly missing cell. Duplicate keys are rejected.
    pub fn from_parts<I>(sites: Vec<Site>, observations: I) -> Result<Dataset>
    where
        I: IntoIterator<Item = (String, u32, SourceId, Option<f64>)>,
    {
        if sites.is_empty() {
            return Err(Error::EmptyInput("dataset has no sites".into()));
        }
        let mut site_index = HashMap::new();
        for (i, s) in sites.iter().enumerate() {
            if site_index.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate site id {}", s.id)));
            }
        }
        let mut obs = BTreeMap::new();
        let mut day_min = u32::MAX;
        let mut day_max = 0u32;
        for (id, day, source, value) in observations {
            let idx = *site_index.get(&id).ok_or_else(|| {
                Error::InvalidParam(format!("observation references unknown site {id}"))
            })?;
            if obs.insert((idx, day, source), value).is_some() {
                return Err(Error::DuplicateKey {
                    site: id,
                    day,
                    source_name: source.to_string(),
                });
            }
            day_min = day_min.min(day);
            day_max = day_max.max(day);
        }
        if obs.is_empty() {
            day_min = 0;
        }
        Ok(Dataset {
            sites,
            site_index,
            obs,
            day_range: (day_min, day_max),
        })
    }

    /// Load a dataset from a CSV file under the given schema.
    ///
    /// Missing cells (empty value fields) become missing observations,
    /// never zeros. Lines starting with `#` are skipped.
    pub fn load_csv(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_reader(file, schema)
    }

    /// Same as [`Dataset::load_csv`] but from any reader.
    pub fn from_reader<R: Read>(reader: R, schema: Schema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr.headers()?.clone();
        let expect: &[&str] = match schema {
            Schema::Long => &["site_id", "lat", "lon", "day", "source", "value"],
            Schema::Wide => &["site_id", "lat", "lon", "day", "field", "simA", "simB"],
        };
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {expect:?}, got {got:?}"),
            });
        }

        let mut sites: Vec<Site> = Vec::new();
        let mut site_index: HashMap<String, usize> = HashMap::new();
        let mut rows: Vec<(String, u32, SourceId, Option<f64>)> = Vec::new();

        for (rec_no, rec) in rdr.records().enumerate() {
            let line = rec_no + 2; // 1-based, after header
            let rec = rec?;
            let field_at = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("missing column {i}"),
                })
            };
            let id = field_at(0)?.to_string();
            let lat: f64 = parse_num(field_at(1)?, line, "lat")?;
            let lon: f64 = parse_num(field_at(2)?, line, "lon")?;
            let day: u32 = field_at(3)?.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid day `{}`", field_at(3).unwrap_or("")),
            })?;

            match site_index.get(&id) {
                Some(&i) => {
                    let s = &sites[i];
                    if s.lat != lat || s.lon != lon {
                        return Err(Error::Parse {
                            line,
                            msg: format!(
                                "site {id} re-declared with different coordinates \
                                 ({}, {}) vs ({lat}, {lon})",
                                s.lat, s.lon
                            ),
                        });
                    }
                }
                None => {
                    let site = Site::new(id.clone(), lat, lon)
                        .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
                    site_index.insert(id.clone(), sites.len());
                    sites.push(site);
                }
            }

            match schema {
                Schema::Long => {
                    let src_str = field_at(4)?;
                    let source = SourceId::parse(src_str).ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("unknown source `{src_str}`"),
                    })?;
                    let value = parse_value(field_at(5)?, line)?;
                    rows.push((id, day, source, value));
                }
                Schema::Wide => {
                    for (col, source) in (4..7).zip(SourceId::ALL) {
                        let value = parse_value(field_at(col)?, line)?;
                        rows.push((id.clone(), day, source, value));
                    }
                }
            }
        }

        Dataset::from_parts(sites, rows)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn day_range(&self) -> (u32, u32) {
        self.day_range
    }

    pub fn site_idx(&self, id: &str) -> Option<usize> {
        self.site_index.get(id).copied()
    }

    /// Value at a cell; `None` when missing (explicitly or by absence).
    pub fn value(&self, site_idx: usize, day: u32, source: SourceId) -> Option<f64> {
        self.obs.get(&(site_idx, day, source)).copied().flatten()
    }

    /// Count of cells recorded in the input but carrying no value.
    pub fn n_explicit_missing(&self) -> usize {
        self.obs.values().filter(|v| v.is_none()).count()
    }

    pub fn n_observed(&self, source: SourceId) -> usize {
        self.obs
            .iter()
            .filter(|((_, _, s), v)| *s == source && v.is_some())
            .count()
    }

    /// Observed (day, value) series for one site and source, sorted by day.
    pub fn site_series(&self, site_idx: usize, source: SourceId) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = self
            .obs
            .iter()
            .filter_map(|(&(i, day, s), &v)| {
                (i == site_idx && s == source).then_some(v.map(|x| (day, x))).flatten()
            })
            .collect();
        out.sort_unstable_by_key(|&(d, _)| d);
        out
    }

    /// Copy of this dataset with one site (and its observations) removed.
    pub fn without_site(&self, site_idx: usize) -> Result<Dataset> {
        if site_idx >= self.sites.len() {
            return Err(Error::Shape(format!(
                "site index {site_idx} out of range (n={})",
                self.sites.len()
            )));
        }
        let sites: Vec<Site> = self
            .sites
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != site_idx)
            .map(|(_, s)| s.clone())
            .collect();
        let rows = self.obs.iter().filter_map(|(&(i, day, source), &v)| {
            (i != site_idx).then(|| (self.sites[i].id.clone(), day, source, v))
        });
        Dataset::from_parts(sites, rows.collect::<Vec<_>>())
    }

    /// Per-site arithmetic mean over non-missing days for one source.
    ///
    /// Sites without any observation for the source are excluded from the
    /// means and reported. Observations equal to zero are kept but flagged.
    pub fn aggregate_time(&self, source: SourceId) -> Result<AggregateReport> {
        if self.sites.is_empty() {
            return Err(Error::EmptyInput("dataset has no sites".into()));
        }
        let mut sums = vec![(0.0f64, 0usize); self.sites.len()];
        let mut zero_values: Vec<(Site, u32)> = Vec::new();
        for (&(i, day, s), &v) in &self.obs {
            if s != source {
                continue;
            }
            if let Some(x) = v {
                sums[i].0 += x;
                sums[i].1 += 1;
                if x == 0.0 {
                    zero_values.push((self.sites[i].clone(), day));
                }
            }
        }
        let mut means = Vec::new();
        let mut excluded = Vec::new();
        for (i, &(sum, n)) in sums.iter().enumerate() {
            if n == 0 {
                excluded.push(self.sites[i].clone());
            } else {
                means.push(SiteMean {
                    site: self.sites[i].clone(),
                    mean: sum / n as f64,
                    n_days: n,
                });
            }
        }
        zero_values.sort_by(|a, b| (&a.0.id, a.1).cmp(&(&b.0.id, b.1)));
        Ok(AggregateReport {
            means,
            excluded,
            zero_values,
        })
    }

    /// Observed-minus-fitted residuals for one source, with identical
    /// missingness. `fitted` must cover every non-missing cell of `source`.
    pub fn residual_series<F>(&self, source: SourceId, fitted: F) -> Result<Dataset>
    where
        F: Fn(usize, u32) -> Option<f64>,
    {
        let mut rows: Vec<(String, u32, SourceId, Option<f64>)> = Vec::new();
        for (&(i, day, s), &v) in &self.obs {
            if s != source {
                continue;
            }
            let resid = match v {
                Some(obs) => {
                    let f = fitted(i, day).ok_or_else(|| {
                        Error::Coverage(format!(
                            "no fitted value for observed cell (site {}, day {day}, {source})",
                            self.sites[i].id
                        ))
                    })?;
                    Some(obs - f)
                }
                None => None,
            };
            rows.push((self.sites[i].id.clone(), day, source, resid));
        }
        Dataset::from_parts(self.sites.clone(), rows)
    }
}

fn parse_num(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite {what} `{s}`"),
        });
    }
    Ok(v)
}

fn parse_value(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    let v = parse_num(s, line, "value")?;
    if v < 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("negative irradiance value `{s}`"),
        });
    }
    Ok(Some(v))
}
