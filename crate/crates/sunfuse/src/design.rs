//! Space-filling augmentation of simulator runs: maximin site selection,
//! fixed-grid snapping, bilinear interpolation, and query-document
//! construction for the simulation data service.

use std::collections::BTreeMap;
use std::io::Read;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Site;
use crate::error::{Error, Result};

/// The service's fixed lat/lon grid: step `1e-6 * 2^15` degrees, origin (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub step: f64,
}

impl GridSpec {
    /// The data service's grid step, 0.032768 degrees.
    pub fn service() -> GridSpec {
        GridSpec { step: 1e-6 * 32768.0 }
    }

    pub fn new(step: f64) -> Result<GridSpec> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParam("grid step must be positive".into()));
        }
        Ok(GridSpec { step })
    }

    /// Index of the nearest grid line; ties round toward positive infinity.
    pub fn index(&self, v: f64) -> i64 {
        (v / self.step + 0.5).floor() as i64
    }

    pub fn coord(&self, idx: i64) -> f64 {
        idx as f64 * self.step
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::service()
    }
}

/// Round each coordinate to the nearest grid multiple (ties toward +inf).
pub fn snap_to_grid(p: (f64, f64), g: &GridSpec) -> (f64, f64) {
    (g.coord(g.index(p.0)), g.coord(g.index(p.1)))
}

/// Geographic region for candidate generation.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box {
        lat: (f64, f64),
        lon: (f64, f64),
    },
    /// Closed polygon given by its vertices (lat, lon).
    Polygon(Vec<(f64, f64)>),
}

impl Region {
    /// Continental-US bounding box.
    pub fn conus() -> Region {
        Region::Box {
            lat: (24.0, 50.0),
            lon: (-125.0, -66.0),
        }
    }

    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        match self {
            Region::Box { lat, lon } => (*lat, *lon),
            Region::Polygon(pts) => {
                let mut lat = (f64::INFINITY, f64::NEG_INFINITY);
                let mut lon = (f64::INFINITY, f64::NEG_INFINITY);
                for &(a, o) in pts {
                    lat = (lat.0.min(a), lat.1.max(a));
                    lon = (lon.0.min(o), lon.1.max(o));
                }
                (lat, lon)
            }
        }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        match self {
            Region::Box { lat, lon } => {
                p.0 >= lat.0 && p.0 <= lat.1 && p.1 >= lon.0 && p.1 <= lon.1
            }
            Region::Polygon(pts) => {
                // Ray casting on the (lat, lon) plane.
                let n = pts.len();
                if n < 3 {
                    return false;
                }
                let (x, y) = p;
                let mut inside = false;
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > y) != (yj > y) {
                        let x_cross = xi + (y - yi) / (yj - yi) * (xj - xi);
                        if x < x_cross {
                            inside = !inside;
                        }
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

/// Space-filling design snapped to the grid.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub points: Vec<(f64, f64)>,
    /// Minimum of pairwise distances among the new points and distances to
    /// the existing sites, after snapping. Infinite for a single new point
    /// with no existing sites.
    pub achieved_min_dist: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Draw a uniform candidate pool from the region.
pub fn sample_candidates(region: &Region, count: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let ((lat_lo, lat_hi), (lon_lo, lon_hi)) = region.bounding_box();
    if !(lat_hi >= lat_lo) || !(lon_hi >= lon_lo) {
        return Err(Error::InfeasibleDesign("empty region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(1000).max(1000);
    let mut attempts = 0;
    while out.len() < count && attempts < max_attempts {
        attempts += 1;
        let p = (
            lat_lo + rng.random::<f64>() * (lat_hi - lat_lo),
            lon_lo + rng.random::<f64>() * (lon_hi - lon_lo),
        );
        if region.contains(p) {
            out.push(p);
        }
    }
    if out.len() < count {
        return Err(Error::InfeasibleDesign(format!(
            "could only draw {} of {count} candidates from the region",
            out.len()
        )));
    }
    Ok(out)
}

/// Greedy maximin selection over an explicit candidate pool.
///
/// Each step takes the candidate maximizing the minimum distance to the
/// union of existing sites and already-selected points; with nothing to
/// measure against, the first pick is the candidate farthest from the pool
/// centroid. Points are snapped to the grid after selection.
pub fn maximin_design_with_pool(
    n_new: usize,
    existing: &[(f64, f64)],
    mut pool: Vec<(f64, f64)>,
    g: &GridSpec,
) -> Result<DesignResult> {
    if n_new == 0 {
        return Err(Error::InvalidParam("n_new must be at least 1".into()));
    }
    if pool.len() < n_new {
        return Err(Error::InfeasibleDesign(format!(
            "candidate pool of {} cannot supply {n_new} points",
            pool.len()
        )));
    }
    let mut selected: Vec<(f64, f64)> = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let best_idx = if existing.is_empty() && selected.is_empty() {
            let c = pool.len() as f64;
            let centroid = pool
                .iter()
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / c, acc.1 + p.1 / c));
            argmax_by(&pool, |p| dist(*p, centroid))
        } else {
            argmax_by(&pool, |p| {
                existing
                    .iter()
                    .chain(selected.iter())
                    .map(|q| dist(*p, *q))
                    .fold(f64::INFINITY, f64::min)
            })
        };
        selected.push(pool.swap_remove(best_idx));
    }

    let points: Vec<(f64, f64)> = selected.iter().map(|&p| snap_to_grid(p, g)).collect();
    let mut min_d = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            min_d = min_d.min(dist(points[i], points[j]));
        }
        for q in existing {
            min_d = min_d.min(dist(points[i], *q));
        }
    }
    Ok(DesignResult {
        points,
        achieved_min_dist: min_d,
    })
}

fn argmax_by(pool: &[(f64, f64)], score: impl Fn(&(f64, f64)) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, p) in pool.iter().enumerate() {
        let s = score(p);
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

/// Greedy maximin design over a seeded uniform candidate pool.
pub fn maximin_design(
    n_new: usize,
    existing: &[(f64, f64)],
    region: &Region,
    candidates: usize,
    seed: u64,
    g: &GridSpec,
) -> Result<DesignResult> {
    let pool = sample_candidates(region, candidates, seed)?;
    maximin_design_with_pool(n_new, existing, pool, g)
}

/// Default candidate count for a design of `n_new` points.
pub fn default_candidates(n_new: usize) -> usize {
    100 * n_new
}

/// Corner values of one grid cell: `values[0]` at (lat0, lon0), `values[1]`
/// at (lat0, lon1), `values[2]` at (lat1, lon0), `values[3]` at (lat1, lon1).
#[derive(Debug, Clone, Copy)]
pub struct CellCorners {
    pub lat0: f64,
    pub lon0: f64,
    pub step: f64,
    pub values: [f64; 4],
}

/// Standard bilinear interpolation from normalized offsets inside the cell.
pub fn bilinear_interpolate(c: &CellCorners, p: (f64, f64)) -> Result<f64> {
    let u = (p.0 - c.lat0) / c.step;
    let v = (p.1 - c.lon0) / c.step;
    let eps = 1e-9;
    if !((-eps..=1.0 + eps).contains(&u) && (-eps..=1.0 + eps).contains(&v)) {
        return Err(Error::OutOfCell {
            lat: p.0,
            lon: p.1,
            lat0: c.lat0,
            lon0: c.lon0,
        });
    }
    let u = u.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    Ok(c.values[0] * (1.0 - u) * (1.0 - v)
        + c.values[1] * (1.0 - u) * v
        + c.values[2] * u * (1.0 - v)
        + c.values[3] * u * v)
}

/// On-grid values keyed by grid indices, loaded from fixtures or service
/// responses.
#[derive(Debug, Clone, Default)]
pub struct GridValues {
    map: BTreeMap<(i64, i64), f64>,
}

impl GridValues {
    pub fn new() -> GridValues {
        GridValues::default()
    }

    pub fn insert(&mut self, lat: f64, lon: f64, value: f64, g: &GridSpec) {
        self.map.insert((g.index(lat), g.index(lon)), value);
    }

    pub fn get_index(&self, idx: (i64, i64)) -> Option<f64> {
        self.map.get(&idx).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Load from CSV with header `lat,lon,value`; coordinates are snapped
    /// to the grid. Lines starting with `#` are skipped.
    pub fn from_reader<R: Read>(reader: R, g: &GridSpec) -> Result<GridValues> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        if headers != ["lat", "lon", "value"] {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header [lat, lon, value], got {headers:?}"),
            });
        }
        let mut gv = GridValues::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let get = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("invalid number in column {j}"),
                    })
            };
            gv.insert(get(0)?, get(1)?, get(2)?, g);
        }
        Ok(gv)
    }
}

/// Value at an off-grid site via lookup of its enclosing cell's corners and
/// bilinear interpolation.
pub fn interpolate_offgrid(site: &Site, grid_values: &GridValues, g: &GridSpec) -> Result<f64> {
    let eps = 1e-9;
    let i0 = (site.lat / g.step + eps).floor() as i64;
    let j0 = (site.lon / g.step + eps).floor() as i64;
    let corners_idx = [(i0, j0), (i0, j0 + 1), (i0 + 1, j0), (i0 + 1, j0 + 1)];
    let mut values = [0.0f64; 4];
    let mut missing = Vec::new();
    for (slot, idx) in corners_idx.iter().enumerate() {
        match grid_values.get_index(*idx) {
            Some(v) => values[slot] = v,
            None => missing.push(format!("({}, {})", g.coord(idx.0), g.coord(idx.1))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(format!(
            "grid values missing for corners: {}",
            missing.join(", ")
        )));
    }
    // Corner order: values[1] varies lon, values[2] varies lat.
    let cell = CellCorners {
        lat0: g.coord(i0),
        lon0: g.coord(j0),
        step: g.step,
        values: [values[0], values[1], values[2], values[3]],
    };
    bilinear_interpolate(&cell, (site.lat, site.lon))
}

/// Point-query request against the simulation data service.
#[derive(Debug, Clone, PartialEq)]
pub struct PairsQuery {
    pub layer_id: String,
    pub start: String,
    pub end: String,
    pub coords: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct QueryDoc {
    layers: Vec<LayerRef>,
    temporal: Temporal,
    spatial: Spatial,
}

#[derive(Serialize, Deserialize)]
struct LayerRef {
    id: String,
}

#[derive(Serialize, Deserialize)]
struct Temporal {
    intervals: Vec<Interval>,
}

#[derive(Serialize, Deserialize)]
struct Interval {
    start: String,
    end: String,
}

#[derive(Serialize, Deserialize)]
struct Spatial {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Vec<f64>,
}

fn check_timestamp(s: &str) -> Result<()> {
    let b = s.as_bytes();
    let ok = b.len() == 20
        && b[4] == b'-'
        && b[7] == b'-'
        && b[10] == b'T'
        && b[13] == b':'
        && b[16] == b':'
        && b[19] == b'Z'
        && b.iter().enumerate().all(|(i, &c)| {
            matches!(i, 4 | 7 | 10 | 13 | 16 | 19) || c.is_ascii_digit()
        });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "timestamp `{s}` is not of the form YYYY-MM-DDTHH:MM:SSZ"
        )))
    }
}

/// Serialize a point query to the service's JSON document shape, with
/// coordinates as a flat `lat,lon` sequence.
pub fn build_pairs_query(q: &PairsQuery) -> Result<String> {
    if q.coords.is_empty() {
        return Err(Error::EmptyInput("query has no coordinates".into()));
    }
    check_timestamp(&q.start)?;
    check_timestamp(&q.end)?;
    if q.start >= q.end {
        return Err(Error::InvalidParam(format!(
            "interval start {} is not before end {}",
            q.start, q.end
        )));
    }
    let doc = QueryDoc {
        layers: vec![LayerRef {
            id: q.layer_id.clone(),
        }],
        temporal: Temporal {
            intervals: vec![Interval {
                start: q.start.clone(),
                end: q.end.clone(),
            }],
        },
        spatial: Spatial {
            kind: "point".into(),
            coordinates: q.coords.iter().flat_map(|&(a, o)| [a, o]).collect(),
        },
    };
    Ok(serde_json::to_string(&doc)?)
}

/// Parse a query document back into its parts.
pub fn parse_pairs_query(s: &str) -> Result<PairsQuery> {
    let doc: QueryDoc = serde_json::from_str(s)?;
    if doc.layers.len() != 1 {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected one layer, got {}", doc.layers.len()),
        });
    }
    if doc.temporal.intervals.len() != 1 {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "expected one interval, got {}",
                doc.temporal.intervals.len()
            ),
        });
    }
    if doc.spatial.kind != "point" {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unsupported spatial type `{}`", doc.spatial.kind),
        });
    }
    if doc.spatial.coordinates.len() % 2 != 0 || doc.spatial.coordinates.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "coordinates must be a nonempty flat lat,lon sequence".into(),
        });
    }
    let coords = doc
        .spatial
        .coordinates
        .chunks(2)
        .map(|c| (c[0], c[1]))
        .collect();
    Ok(PairsQuery {
        layer_id: doc.layers.into_iter().next().unwrap().id,
        start: doc.temporal.intervals[0].start.clone(),
        end: doc.temporal.intervals[0].end.clone(),
        coords,
    })
}
