//! Local approximate GP prediction.
//!
//! Each query point gets its own small sub-design drawn from the full data,
//! its own hyperparameters fit by MLE on that sub-design, and an exact GP
//! prediction from the local model. Queries are independent, so large query
//! sets parallelize trivially and no N x N matrix is ever formed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{fit_gp, kernel, FitConfig, KernelParams, Prediction};

/// Sub-design selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    /// The `n` Euclidean-nearest training points.
    NearestNeighbor,
    /// Seed with the nearest points, then greedily add the candidate giving
    /// the largest reduction in predictive variance at the query.
    GreedyVariance,
}

impl SelectionMethod {
    pub fn parse(s: &str) -> Option<SelectionMethod> {
        match s {
            "nn" => Some(SelectionMethod::NearestNeighbor),
            "alc" => Some(SelectionMethod::GreedyVariance),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMethod::NearestNeighbor => "nn",
            SelectionMethod::GreedyVariance => "alc",
        }
    }
}

/// Settings for local prediction.
#[derive(Debug, Clone)]
pub struct LocalConfig {
    /// Sub-design size.
    pub n: usize,
    pub method: SelectionMethod,
    /// Number of nearest neighbors seeding a greedy search.
    pub n_start: usize,
    /// Hyperparameter fit settings for the per-query local models.
    pub fit: FitConfig,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            n: 50,
            method: SelectionMethod::NearestNeighbor,
            n_start: 6,
            fit: FitConfig {
                n_starts: 2,
                max_iter: 60,
                seed: 0,
            },
        }
    }
}

impl LocalConfig {
    fn validate(&self, n_total: usize) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParam("sub-design size must be >= 3".into()));
        }
        if self.n_start > self.n {
            return Err(Error::InvalidParam(format!(
                "n_start {} exceeds sub-design size {}",
                self.n_start, self.n
            )));
        }
        if n_total < self.n {
            return Err(Error::InsufficientData {
                required: self.n,
                actual: n_total,
                context: "local sub-design selection".into(),
            });
        }
        Ok(())
    }
}

/// Candidate pool is capped at this multiple of the sub-design size; points
/// further out cannot enter a local design under a decaying kernel.
const POOL_FACTOR: usize = 10;

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..x.ncols()).map(|k| x[(i, k)]).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Indices ordered by distance to `query`, ties broken by index.
fn by_distance(x: &DMatrix<f64>, query: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    let d: Vec<f64> = (0..x.nrows()).map(|i| sq_dist(&row(x, i), query)).collect();
    idx.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(a.cmp(&b)));
    idx
}

/// Select a sub-design of size `cfg.n` for predicting at `query`.
///
/// `params` supplies the kernel used by the greedy variance criterion; when
/// absent a data-scaled default is used. The returned indices are sorted
/// ascending, so `n = N` reproduces the full design in its original order.
pub fn select_subdesign(
    x: &DMatrix<f64>,
    query: &[f64],
    cfg: &LocalConfig,
    params: Option<&KernelParams>,
) -> Result<Vec<usize>> {
    cfg.validate(x.nrows())?;
    if query.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} vs design dim {}",
            query.len(),
            x.ncols()
        )));
    }
    let ordered = by_distance(x, query);
    let mut selected: Vec<usize> = match cfg.method {
        SelectionMethod::NearestNeighbor => ordered[..cfg.n].to_vec(),
        SelectionMethod::GreedyVariance => {
            let seed: Vec<usize> = ordered[..cfg.n_start.min(cfg.n)].to_vec();
            let pool_end = (POOL_FACTOR * cfg.n).min(ordered.len());
            let pool: Vec<usize> = ordered[seed.len()..pool_end].to_vec();
            let default_params;
            let p = match params {
                Some(p) => p,
                None => {
                    default_params = default_greedy_params(x, &ordered[..pool_end]);
                    &default_params
                }
            };
            greedy_grow(x, query, seed, pool, cfg.n, p)?
        }
    };
    selected.sort_unstable();
    Ok(selected)
}

/// Data-scaled kernel for greedy selection when no fit is available.
fn default_greedy_params(x: &DMatrix<f64>, pool: &[usize]) -> KernelParams {
    let p = x.ncols();
    let mut ls = vec![1.0; p];
    for (k, l) in ls.iter_mut().enumerate() {
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in pool {
            mn = mn.min(x[(i, k)]);
            mx = mx.max(x[(i, k)]);
        }
        let r = (mx - mn).max(1e-8);
        *l = r * r / 4.0;
    }
    KernelParams::new(ls, 1.0, 1e-2).expect("valid default params")
}

/// Grow `seed` to `target` points, each step adding the pool candidate that
/// maximizes the reduction in predictive variance at `query`.
fn greedy_grow(
    x: &DMatrix<f64>,
    query: &[f64],
    seed: Vec<usize>,
    mut pool: Vec<usize>,
    target: usize,
    params: &KernelParams,
) -> Result<Vec<usize>> {
    let noise = params.noise_variance().max(params.signal_variance * 1e-10);
    let mut selected = seed;

    // Incrementally maintained lower Cholesky factor of the selected
    // covariance (with nugget), and L^-1 k(X_sel, query).
    let m0 = selected.len();
    let k_seed = DMatrix::from_fn(m0, m0, |i, j| {
        kernel_ix(x, selected[i], selected[j], params) + if i == j { noise } else { 0.0 }
    });
    let mut l = nalgebra::Cholesky::new(k_seed)
        .ok_or_else(|| Error::Conditioning("greedy seed covariance not PD".into()))?
        .unpack();
    let kq_seed = DVector::from_fn(m0, |i, _| kernel(&row(x, selected[i]), query, params).unwrap());
    let mut v_q = l
        .solve_lower_triangular(&kq_seed)
        .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;

    while selected.len() < target {
        if pool.is_empty() {
            return Err(Error::InsufficientData {
                required: target,
                actual: selected.len(),
                context: "greedy candidate pool exhausted".into(),
            });
        }
        let m = selected.len();
        let mut best: Option<(f64, usize, DVector<f64>, f64)> = None;
        for (pi, &j) in pool.iter().enumerate() {
            let c = DVector::from_fn(m, |i, _| kernel_ix(x, selected[i], j, params));
            let Some(lj) = l.solve_lower_triangular(&c) else {
                continue;
            };
            let denom = kernel_ix(x, j, j, params) + noise - lj.norm_squared();
            if denom <= noise * 1e-6 {
                continue; // numerically coincident with the current design
            }
            let kqj = kernel(&row(x, j), query, params).unwrap();
            let num = kqj - lj.dot(&v_q);
            let reduction = num * num / denom;
            if best.as_ref().map_or(true, |(b, _, _, _)| reduction > *b) {
                best = Some((reduction, pi, lj, denom));
            }
        }
        let Some((_, pi, lj, denom)) = best else {
            return Err(Error::Conditioning(
                "no admissible greedy candidate remains".into(),
            ));
        };
        let j = pool.remove(pi);

        // Append row [lj^T, sqrt(denom)] to L and extend L^-1 k(., query).
        let pivot = denom.sqrt();
        let mut l_new = DMatrix::zeros(m + 1, m + 1);
        l_new.view_mut((0, 0), (m, m)).copy_from(&l);
        for i in 0..m {
            l_new[(m, i)] = lj[i];
        }
        l_new[(m, m)] = pivot;
        l = l_new;
        let kqj = kernel(&row(x, j), query, params).unwrap();
        let vq_new = (kqj - lj.dot(&v_q)) / pivot;
        v_q = v_q.push(vq_new);
        selected.push(j);
    }
    Ok(selected)
}

fn kernel_ix(x: &DMatrix<f64>, i: usize, j: usize, params: &KernelParams) -> f64 {
    kernel(&row(x, i), &row(x, j), params).unwrap()
}

/// Local-model prediction for each row of `xnew`.
///
/// For each query independently: select a sub-design, fit local
/// hyperparameters by MLE on it, and return the exact-GP prediction from
/// the local model. Queries run in parallel over read-only data; the fit
/// seed is shared so outputs do not depend on query order or thread count.
pub fn local_predict(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xnew: &DMatrix<f64>,
    cfg: &LocalConfig,
    include_noise: bool,
) -> Result<Vec<Prediction>> {
    cfg.validate(x.nrows())?;
    if y.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "X has {} rows but y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if xnew.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "query has {} columns, design has {}",
            xnew.ncols(),
            x.ncols()
        )));
    }
    let queries: Vec<Vec<f64>> = (0..xnew.nrows()).map(|q| row(xnew, q)).collect();
    queries
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            predict_one(x, y, q, cfg, include_noise).map_err(|e| Error::LocalQuery {
                index: qi,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn predict_one(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    query: &[f64],
    cfg: &LocalConfig,
    include_noise: bool,
) -> Result<Prediction> {
    let seed_params = match cfg.method {
        SelectionMethod::GreedyVariance if cfg.n_start >= 5 && cfg.n_start < x.nrows() => {
            let seed_idx: Vec<usize> = by_distance(x, query)[..cfg.n_start].to_vec();
            let (xs, ys) = gather(x, y, &seed_idx);
            Some(fit_gp(&xs, &ys, &cfg.fit)?.params().clone())
        }
        _ => None,
    };
    let sel = select_subdesign(x, query, cfg, seed_params.as_ref())?;
    let (xs, ys) = gather(x, y, &sel);
    let model = fit_gp(&xs, &ys, &cfg.fit)?;
    let qm = DMatrix::from_fn(1, query.len(), |_, k| query[k]);
    Ok(model.predict(&qm, include_noise)?[0])
}

fn gather(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let xs = DMatrix::from_fn(idx.len(), x.ncols(), |i, k| x[(idx[i], k)]);
    let ys = DVector::from_fn(idx.len(), |i, _| y[idx[i]]);
    (xs, ys)
}

/// Predictive variance at `query` for a fixed sub-design and fixed
/// hyperparameters. Exposed for selection-quality checks.
pub fn subdesign_variance(
    x: &DMatrix<f64>,
    idx: &[usize],
    query: &[f64],
    params: &KernelParams,
) -> Result<f64> {
    let n = idx.len();
    let noise = params.noise_variance().max(params.signal_variance * 1e-10);
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel_ix(x, idx[i], idx[j], params));
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = nalgebra::Cholesky::new(k)
        .ok_or_else(|| Error::Conditioning("sub-design covariance not PD".into()))?;
    let kq = DVector::from_fn(n, |i, _| kernel(&row(x, idx[i]), query, params).unwrap());
    let sol = chol.solve(&kq);
    Ok(params.signal_variance - kq.dot(&sol))
}
