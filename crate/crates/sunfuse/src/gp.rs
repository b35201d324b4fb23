//! Exact Gaussian-process regression with a separable squared-exponential
//! kernel, likelihood-based hyperparameter training, and Cholesky-backed
//! predictive equations.
//!
//! The kernel is `sv * exp(-sum_k (x_k - x'_k)^2 / ls_k)` with a nugget
//! added on the diagonal of the training covariance only. Responses are
//! centered on their mean before fitting and the offset is restored at
//! prediction time.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bfgs_box, Bounds};

/// Smallest admissible nugget; also the starting point of jitter escalation.
pub const JITTER_FLOOR: f64 = 1e-8;
/// Largest diagonal jitter tried before declaring a conditioning failure.
pub const JITTER_MAX: f64 = 1e-4;

/// Kernel hyperparameters: per-dimension lengthscales, signal variance,
/// and a nugget expressed as a fraction of the signal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, nugget: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParam(
                "lengthscales must be strictly positive".into(),
            ));
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(Error::InvalidParam(
                "signal variance must be strictly positive".into(),
            ));
        }
        if !(nugget >= 0.0) || !nugget.is_finite() {
            return Err(Error::InvalidParam("nugget must be nonnegative".into()));
        }
        Ok(KernelParams {
            lengthscales,
            signal_variance,
            nugget,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Noise variance implied by the nugget, in response units.
    pub fn noise_variance(&self) -> f64 {
        self.nugget * self.signal_variance
    }
}

/// Mean and variance of a Gaussian predictive distribution at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Covariance between two points (no nugget).
pub fn kernel(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != params.dim() || x2.len() != params.dim() {
        return Err(Error::Shape(format!(
            "kernel inputs of dim {}/{} vs params dim {}",
            x.len(),
            x2.len(),
            params.dim()
        )));
    }
    Ok(kernel_unchecked(x, x2, params))
}

#[inline]
fn kernel_unchecked(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        let d = x[k] - x2[k];
        s += d * d / params.lengthscales[k];
    }
    params.signal_variance * (-s).exp()
}

/// Per-dimension squared distance matrices, computed once per design.
struct SqDists {
    n: usize,
    dists: Vec<DMatrix<f64>>,
}

impl SqDists {
    fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let dists = (0..p)
            .map(|k| {
                DMatrix::from_fn(n, n, |i, j| {
                    let d = x[(i, k)] - x[(j, k)];
                    d * d
                })
            })
            .collect();
        SqDists { n, dists }
    }

    /// Correlation matrix C with C_ij = exp(-sum_k d2_ijk / ls_k).
    fn correlation(&self, ls: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for (k, d) in self.dists.iter().enumerate() {
                    s += d[(i, j)] / ls[k];
                }
                let v = (-s).exp();
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

/// Negative log likelihood and its gradient with respect to the
/// log-transformed parameters, ordered `[log ls_1..log ls_p, log sv, log nugget]`.
///
/// The response is centered on its mean before evaluation. No jitter is
/// added: a covariance that fails to factorize is a conditioning error.
pub fn neg_log_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
            context: "likelihood evaluation".into(),
        });
    }
    if y.len() != n || x.ncols() != params.dim() {
        return Err(Error::Shape(format!(
            "X is {}x{}, y has {}, params dim {}",
            n,
            x.ncols(),
            y.len(),
            params.dim()
        )));
    }
    let sq = SqDists::new(x);
    let offset = y.mean();
    let z = y.map(|v| v - offset);
    nll_inner(&sq, &z, params)
}

fn nll_inner(sq: &SqDists, z: &DVector<f64>, params: &KernelParams) -> Result<(f64, Vec<f64>)> {
    let n = sq.n;
    let p = sq.dists.len();
    let sv = params.signal_variance;
    let g = params.nugget;

    let c = sq.correlation(&params.lengthscales);
    let mut k = c.clone() * sv;
    for i in 0..n {
        k[(i, i)] += sv * g;
    }
    let chol = nalgebra::Cholesky::new(k).ok_or_else(|| {
        Error::Conditioning("covariance matrix is not positive definite".into())
    })?;

    let log_det: f64 = {
        let l = chol.l_dirty();
        (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    };
    let alpha = chol.solve(z);
    let data_term = 0.5 * z.dot(&alpha);
    let value = data_term + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return Err(Error::Conditioning("non-finite likelihood value".into()));
    }

    let k_inv = chol.inverse();

    // d/dtheta = 0.5 tr(K^-1 dK) - 0.5 a^T dK a, evaluated per log-parameter.
    // E_ij = (K^-1_ij - a_i a_j) distilled once; each dK is an elementwise
    // scaling of sv*C (lengthscales) or diagonal (sv, nugget).
    let mut grad = vec![0.0f64; p + 2];
    for kdim in 0..p {
        let ls = params.lengthscales[kdim];
        let d2 = &sq.dists[kdim];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dk = sv * c[(i, j)] * d2[(i, j)] / ls;
                acc += (k_inv[(i, j)] - alpha[i] * alpha[j]) * dk;
            }
        }
        grad[kdim] = 0.5 * acc;
    }
    // log sv: dK = K, so tr(K^-1 K) = n and a^T K a = z^T a.
    grad[p] = 0.5 * (n as f64 - z.dot(&alpha));
    // log nugget: dK = sv*g*I.
    let tr_kinv: f64 = (0..n).map(|i| k_inv[(i, i)]).sum();
    grad[p + 1] = 0.5 * sv * g * (tr_kinv - alpha.norm_squared());

    Ok((value, grad))
}

/// A trained GP: data, hyperparameters, and the factorized covariance.
#[derive(Debug, Clone)]
pub struct GPModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    params: KernelParams,
    mean_offset: f64,
    /// Lower Cholesky factor of the training covariance (with any jitter).
    l: DMatrix<f64>,
    /// Solution of `Sigma_N alpha = y - mean_offset`.
    alpha: DVector<f64>,
    /// Extra diagonal added during factorization, as a fraction of sv.
    jitter: f64,
}

impl GPModel {
    /// Build a model at fixed hyperparameters, centering on the data mean.
    ///
    /// Jitter escalates from [`JITTER_FLOOR`] by factors of 10 up to
    /// [`JITTER_MAX`] if the covariance fails to factorize.
    pub fn from_params(x: DMatrix<f64>, y: DVector<f64>, params: KernelParams) -> Result<Self> {
        let offset = y.mean();
        Self::from_parts(x, y, params, offset)
    }

    /// As [`GPModel::from_params`] with an explicit mean offset.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: DVector<f64>,
        params: KernelParams,
        mean_offset: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::Shape(format!("X has {n} rows but y has {}", y.len())));
        }
        if x.ncols() != params.dim() {
            return Err(Error::Shape(format!(
                "X has {} columns but params dim {}",
                x.ncols(),
                params.dim()
            )));
        }
        let sq = SqDists::new(&x);
        let c = sq.correlation(&params.lengthscales);
        let sv = params.signal_variance;

        let mut jitter = 0.0f64;
        loop {
            let mut k = c.clone() * sv;
            for i in 0..n {
                k[(i, i)] += sv * (params.nugget + jitter);
            }
            if let Some(chol) = nalgebra::Cholesky::new(k) {
                let z = y.map(|v| v - mean_offset);
                let alpha = chol.solve(&z);
                let l = chol.unpack();
                return Ok(GPModel {
                    x,
                    y,
                    params,
                    mean_offset,
                    l,
                    alpha,
                    jitter,
                });
            }
            jitter = if jitter == 0.0 { JITTER_FLOOR } else { jitter * 10.0 };
            if jitter > JITTER_MAX {
                return Err(Error::Conditioning(format!(
                    "Cholesky failed after escalating jitter to {JITTER_MAX}"
                )));
            }
        }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Predictive mean and variance at each row of `xnew`.
    ///
    /// `include_noise` adds the noise variance `nugget * sv` to each variance,
    /// for predicting noisy observations rather than the latent surface.
    pub fn predict(&self, xnew: &DMatrix<f64>, include_noise: bool) -> Result<Vec<Prediction>> {
        if xnew.ncols() != self.params.dim() {
            return Err(Error::Shape(format!(
                "query has {} columns, model expects {}",
                xnew.ncols(),
                self.params.dim()
            )));
        }
        let n = self.x.nrows();
        let m = xnew.nrows();
        let p = self.params.dim();
        let sv = self.params.signal_variance;
        let ls = &self.params.lengthscales;
        let noise = if include_noise {
            self.params.noise_variance()
        } else {
            0.0
        };
        // Cross covariance between training points and queries, built and
        // solved as one matrix so large query sets stay cheap.
        let mut kx = DMatrix::zeros(n, m);
        for q in 0..m {
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..p {
                    let d = self.x[(i, k)] - xnew[(q, k)];
                    s += d * d / ls[k];
                }
                kx[(i, q)] = sv * (-s).exp();
            }
        }
        let v = self
            .l
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
        let mut out = Vec::with_capacity(m);
        for q in 0..m {
            let mean = kx.column(q).dot(&self.alpha) + self.mean_offset;
            let variance = (sv - v.column(q).norm_squared()).max(0.0) + noise;
            out.push(Prediction { mean, variance });
        }
        Ok(out)
    }

    /// Serialize to a self-describing JSON artifact.
    pub fn to_artifact_json(&self) -> Result<String> {
        let art = GpArtifact {
            version: ARTIFACT_VERSION,
            lengthscales: self.params.lengthscales.clone(),
            signal_variance: self.params.signal_variance,
            nugget: self.params.nugget,
            mean_offset: self.mean_offset,
            x: (0..self.x.nrows())
                .map(|i| (0..self.x.ncols()).map(|j| self.x[(i, j)]).collect())
                .collect(),
            y: self.y.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&art)?)
    }

    /// Rebuild a model from [`GPModel::to_artifact_json`] output; the
    /// covariance is re-factorized on load.
    pub fn from_artifact_json(s: &str) -> Result<Self> {
        let art: GpArtifact = serde_json::from_str(s)?;
        if art.version != ARTIFACT_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported model artifact version {} (expected {ARTIFACT_VERSION})",
                art.version
            )));
        }
        let n = art.x.len();
        if n == 0 {
            return Err(Error::EmptyInput("artifact has no training points".into()));
        }
        let p = art.x[0].len();
        if art.x.iter().any(|r| r.len() != p) || art.y.len() != n {
            return Err(Error::Shape("ragged artifact arrays".into()));
        }
        let x = DMatrix::from_fn(n, p, |i, j| art.x[i][j]);
        let y = DVector::from_vec(art.y);
        let params = KernelParams::new(art.lengthscales, art.signal_variance, art.nugget)?;
        GPModel::from_parts(x, y, params, art.mean_offset)
    }
}

const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GpArtifact {
    version: u32,
    lengthscales: Vec<f64>,
    signal_variance: f64,
    nugget: f64,
    mean_offset: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

/// Settings for likelihood maximization.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Number of optimizer restarts from a space-filling draw.
    pub n_starts: usize,
    /// Iteration cap per restart.
    pub max_iter: usize,
    /// RNG seed for the restart draw.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_starts: 5,
            max_iter: 100,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

struct LogBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn fit_bounds(x: &DMatrix<f64>, z_var: f64) -> LogBounds {
    let p = x.ncols();
    let mut lo = Vec::with_capacity(p + 2);
    let mut hi = Vec::with_capacity(p + 2);
    for k in 0..p {
        let col = x.column(k);
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            mn = mn.min(v);
            mx = mx.max(v);
        }
        let range = (mx - mn).max(1e-8);
        let scale = range * range;
        lo.push((1e-2 * scale).ln());
        hi.push((1e2 * scale).ln());
    }
    let vy = z_var.max(1e-8);
    lo.push((1e-2 * vy).ln());
    hi.push((1e2 * vy).ln());
    lo.push(JITTER_FLOOR.ln());
    hi.push(1e2f64.ln());
    LogBounds { lo, hi }
}

fn params_from_log(u: &[f64], p: usize) -> KernelParams {
    KernelParams {
        lengthscales: u[..p].iter().map(|v| v.exp()).collect(),
        signal_variance: u[p].exp(),
        nugget: u[p + 1].exp(),
    }
}

/// Fit hyperparameters by multi-start likelihood maximization.
///
/// Deterministic for a fixed seed: restart locations come from a stratified
/// draw and ties between optima resolve to the lowest start index.
pub fn fit_gp(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &FitConfig) -> Result<GPModel> {
    let n = x.nrows();
    if n < 5 {
        return Err(Error::InsufficientData {
            required: 5,
            actual: n,
            context: "GP fit".into(),
        });
    }
    let p = x.ncols();
    let offset = y.mean();
    let z = y.map(|v| v - offset);
    let z_var = z.norm_squared() / n as f64;
    let bounds_log = fit_bounds(x, z_var);
    let sq = SqDists::new(x);

    let starts = make_starts(&sq, &bounds_log, z_var, cfg, p);
    let bounds = Bounds {
        lo: bounds_log.lo.clone(),
        hi: bounds_log.hi.clone(),
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut diagnostics = Vec::new();
    for (si, start) in starts.iter().enumerate() {
        let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
            let params = params_from_log(u, p);
            nll_inner(&sq, &z, &params).ok()
        };
        match bfgs_box(objective, start, &bounds, cfg.max_iter) {
            Some(res) => {
                if best.as_ref().map_or(true, |(bv, _)| res.value < *bv) {
                    best = Some((res.value, res.x));
                }
                diagnostics.push(format!(
                    "start {si}: nll {:.6} after {} evals{}",
                    res.value,
                    res.n_evals,
                    if res.converged { "" } else { " (iteration cap)" }
                ));
            }
            None => diagnostics.push(format!("start {si}: infeasible starting point")),
        }
    }

    let (_, u) = best.ok_or_else(|| Error::FitFailure(diagnostics.join("; ")))?;
    let params = params_from_log(&u, p);
    GPModel::from_parts(x.clone(), y.clone(), params, offset)
}

/// Single-start refit from previously estimated hyperparameters.
pub fn fit_gp_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: &KernelParams,
    max_iter: usize,
) -> Result<GPModel> {
    let n = x.nrows();
    if n < 5 {
        return Err(Error::InsufficientData {
            required: 5,
            actual: n,
            context: "GP fit".into(),
        });
    }
    let p = x.ncols();
    if init.dim() != p {
        return Err(Error::Shape("warm-start params dimension mismatch".into()));
    }
    let offset = y.mean();
    let z = y.map(|v| v - offset);
    let z_var = z.norm_squared() / n as f64;
    let bounds_log = fit_bounds(x, z_var);
    let sq = SqDists::new(x);

    let mut start: Vec<f64> = init
        .lengthscales
        .iter()
        .map(|v| v.ln())
        .chain([init.signal_variance.ln(), init.nugget.max(JITTER_FLOOR).ln()])
        .collect();
    for i in 0..start.len() {
        start[i] = start[i].clamp(bounds_log.lo[i], bounds_log.hi[i]);
    }
    let bounds = Bounds {
        lo: bounds_log.lo,
        hi: bounds_log.hi,
    };
    let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
        let params = params_from_log(u, p);
        nll_inner(&sq, &z, &params).ok()
    };
    let res = bfgs_box(objective, &start, &bounds, max_iter)
        .ok_or_else(|| Error::FitFailure("warm start infeasible".into()))?;
    let params = params_from_log(&res.x, p);
    GPModel::from_parts(x.clone(), y.clone(), params, offset)
}

fn make_starts(
    sq: &SqDists,
    bounds: &LogBounds,
    z_var: f64,
    cfg: &FitConfig,
    p: usize,
) -> Vec<Vec<f64>> {
    let mut starts = Vec::with_capacity(cfg.n_starts.max(1));

    // Heuristic center: mean squared distance per dimension.
    let n = sq.n;
    let mut center = Vec::with_capacity(p + 2);
    for d2 in &sq.dists {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += d2[(i, j)];
            }
        }
        let m = if n > 1 { s / (n * (n - 1) / 2) as f64 } else { 1.0 };
        center.push(m.max(1e-12).ln());
    }
    center.push(z_var.max(1e-12).ln());
    center.push(1e-2f64.ln());
    for i in 0..center.len() {
        center[i] = center[i].clamp(bounds.lo[i], bounds.hi[i]);
    }
    starts.push(center);

    if cfg.n_starts > 1 {
        let extra = cfg.n_starts - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Stratified (Latin hypercube) draw in the log box; the nugget
        // coordinate is restricted to [1e-6, 1] where fits usually live.
        let dim = p + 2;
        let mut strata: Vec<Vec<usize>> = (0..dim)
            .map(|_| {
                let mut idx: Vec<usize> = (0..extra).collect();
                for i in (1..idx.len()).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                idx
            })
            .collect();
        for s in 0..extra {
            let mut u = Vec::with_capacity(dim);
            for d in 0..dim {
                let (lo, hi) = if d == p + 1 {
                    ((1e-6f64).ln().max(bounds.lo[d]), 0.0f64.min(bounds.hi[d]))
                } else {
                    (bounds.lo[d], bounds.hi[d])
                };
                let cell = strata[d].pop().unwrap_or(s);
                let frac = (cell as f64 + rng.random::<f64>()) / extra as f64;
                u.push(lo + frac * (hi - lo));
            }
            starts.push(u);
        }
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params2(ls: [f64; 2], sv: f64, g: f64) -> KernelParams {
        KernelParams::new(ls.to_vec(), sv, g).unwrap()
    }

    #[test]
    fn kernel_zero_distance_is_signal_variance() {
        let p = params2([1.0, 1.0], 2.0, 0.1);
        let v = kernel(&[0.3, -0.7], &[0.3, -0.7], &p).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn kernel_long_lengthscale_limit() {
        let p = params2([1e12, 1e12], 3.0, 0.0);
        let v = kernel(&[0.0, 0.0], &[5.0, -4.0], &p).unwrap();
        assert_relative_eq!(v, 3.0, max_relative = 1e-9);
    }

    #[test]
    fn kernel_matches_formula() {
        let p = params2([1.0, 1.0], 1.0, 0.0);
        let v = kernel(&[0.0, 0.0], &[1.0, 1.0], &p).unwrap();
        assert_relative_eq!(v, (-2.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(v, 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let p = params2([1.0, 1.0], 1.0, 0.0);
        assert!(matches!(kernel(&[0.0], &[1.0], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_translation_invariance() {
        let p = params2([0.7, 2.3], 1.4, 0.0);
        let x = [0.2, -1.0];
        let x2 = [1.5, 0.4];
        let base = kernel(&x, &x2, &p).unwrap();
        for c in [-3.0, 0.5, 10.0] {
            let xs = [x[0] + c, x[1] + c];
            let x2s = [x2[0] + c, x2[1] + c];
            assert_relative_eq!(kernel(&xs, &x2s, &p).unwrap(), base, epsilon = 1e-12);
        }
    }

    #[test]
    fn nll_standard_normal_case() {
        // Two points far apart with sv (1 + g) = 1 give Sigma = I.
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1000.0]);
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let p = KernelParams::new(vec![1.0], 0.5, 1.0).unwrap();
        let (v, _) = neg_log_likelihood(&x, &y, &p).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-10);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        for _ in 0..5 {
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 3.0);
            let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let params = KernelParams::new(
                vec![0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>()],
                0.5 + rng.random::<f64>(),
                0.05 + 0.2 * rng.random::<f64>(),
            )
            .unwrap();
            let (_, grad) = neg_log_likelihood(&x, &y, &params).unwrap();
            let fd = fd_gradient(&x, &y, &params, 1e-5);
            for (a, b) in grad.iter().zip(&fd) {
                let denom = b.abs().max(1e-6);
                assert!(
                    (a - b).abs() / denom < 1e-4,
                    "analytic {a} vs fd {b} (grad {grad:?} fd {fd:?})"
                );
            }
        }
    }

    pub(crate) fn fd_gradient(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        params: &KernelParams,
        h: f64,
    ) -> Vec<f64> {
        let p = params.dim();
        let mut u: Vec<f64> = params
            .lengthscales
            .iter()
            .map(|v| v.ln())
            .chain([params.signal_variance.ln(), params.nugget.ln()])
            .collect();
        let eval = |u: &[f64]| {
            let pr = params_from_log(u, p);
            neg_log_likelihood(x, y, &pr).unwrap().0
        };
        let mut out = Vec::with_capacity(u.len());
        for i in 0..u.len() {
            let orig = u[i];
            u[i] = orig + h;
            let fp = eval(&u);
            u[i] = orig - h;
            let fm = eval(&u);
            u[i] = orig;
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn duplicated_point_zero_nugget_fails() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 0.5]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let p = KernelParams::new(vec![1.0], 1.0, 0.0).unwrap();
        let err = neg_log_likelihood(&x, &y, &p).unwrap_err();
        assert!(matches!(err, Error::Conditioning(_)), "{err}");
    }

    #[test]
    fn model_factorization_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 5.0);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let params = params2([1.0, 2.0], 1.5, 0.1);
        let m = GPModel::from_params(x.clone(), y.clone(), params.clone()).unwrap();

        // L L^T reconstructs Sigma_N.
        let mut sigma = DMatrix::from_fn(n, n, |i, j| {
            let xi: Vec<f64> = (0..2).map(|k| x[(i, k)]).collect();
            let xj: Vec<f64> = (0..2).map(|k| x[(j, k)]).collect();
            kernel(&xi, &xj, &params).unwrap()
        });
        for i in 0..n {
            sigma[(i, i)] += params.noise_variance();
        }
        let recon = m.chol_l() * m.chol_l().transpose();
        let rel = (&recon - &sigma).norm() / sigma.norm();
        assert!(rel < 1e-8, "relative Frobenius error {rel}");

        // Sigma_N alpha = y - offset.
        let z = y.map(|v| v - m.mean_offset());
        let resid = (&sigma * m.alpha()) - &z;
        assert!(resid.norm() < 1e-8 * z.norm().max(1.0));
    }

    #[test]
    fn predict_interpolates_training_points() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, -0.5, 0.3, 2.0, 0.0]);
        let params = KernelParams::new(vec![1.0], 1.0, JITTER_FLOOR).unwrap();
        let m = GPModel::from_params(x.clone(), y.clone(), params).unwrap();
        let preds = m.predict(&x, false).unwrap();
        for (p, want) in preds.iter().zip(y.iter()) {
            assert!((p.mean - want).abs() < 1e-6, "{} vs {want}", p.mean);
            assert!(p.variance <= 1e-6, "variance {}", p.variance);
        }
    }

    #[test]
    fn predict_reverts_to_prior_far_away() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 0.2, 0.3]);
        let y = DVector::from_vec(vec![5.0, 6.0, 5.5, 5.8]);
        let params = KernelParams::new(vec![0.01], 2.0, 0.05).unwrap();
        let m = GPModel::from_params(x, y, params).unwrap();
        let far = DMatrix::from_row_slice(1, 1, &[50.0]);
        let p = m.predict(&far, false).unwrap()[0];
        assert_relative_eq!(p.mean, m.mean_offset(), epsilon = 1e-9);
        assert_relative_eq!(p.variance, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn predict_matches_dense_solve_oracle() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 0.7, 1.1, 2.2, 3.0]);
        let y = DVector::from_vec(vec![0.3, 1.0, -0.2, 0.8, 0.5]);
        let params = KernelParams::new(vec![0.8], 1.3, 0.07).unwrap();
        let m = GPModel::from_params(x.clone(), y.clone(), params.clone()).unwrap();

        let xnew = DMatrix::from_row_slice(3, 1, &[0.5, 1.9, 2.6]);
        let preds = m.predict(&xnew, false).unwrap();

        // Naive oracle: explicit matrix inverse of Eq-style equations.
        let n = 5;
        let mut sigma = DMatrix::from_fn(n, n, |i, j| {
            kernel(&[x[(i, 0)]], &[x[(j, 0)]], &params).unwrap()
        });
        for i in 0..n {
            sigma[(i, i)] += params.noise_variance();
        }
        let sigma_inv = sigma.try_inverse().unwrap();
        let offset = y.mean();
        let z = y.map(|v| v - offset);
        for (q, pred) in preds.iter().enumerate() {
            let kv = DVector::from_fn(n, |i, _| {
                kernel(&[x[(i, 0)]], &[xnew[(q, 0)]], &params).unwrap()
            });
            let mean = kv.dot(&(&sigma_inv * &z)) + offset;
            let var = params.signal_variance - (kv.transpose() * &sigma_inv * &kv)[(0, 0)];
            assert!((pred.mean - mean).abs() < 1e-10);
            assert!((pred.variance - var).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_constant_response_reverts_to_constant() {
        let x = DMatrix::from_row_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = DVector::from_element(6, 42.0);
        let m = fit_gp(&x, &y, &FitConfig::default()).unwrap();
        let p = m.predict(&DMatrix::from_row_slice(1, 1, &[2.5]), false).unwrap()[0];
        assert_relative_eq!(p.mean, 42.0, epsilon = 1e-9);
        assert!(p.variance < 1e-6, "variance {}", p.variance);
    }

    #[test]
    fn fit_is_deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(15, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(15, |i, _| (x[(i, 0)] * 3.0).sin() + 0.1 * x[(i, 1)]);
        let cfg = FitConfig::default().with_seed(9);
        let m1 = fit_gp(&x, &y, &cfg).unwrap();
        let m2 = fit_gp(&x, &y, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn artifact_roundtrip_and_version_check() {
        let x = DMatrix::from_row_slice(5, 2, &[0., 0., 1., 0., 0., 1., 1., 1., 0.5, 0.5]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 2.5]);
        let params = params2([1.0, 1.0], 1.0, 0.01);
        let m = GPModel::from_params(x, y, params).unwrap();
        let json = m.to_artifact_json().unwrap();
        let back = GPModel::from_artifact_json(&json).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.mean_offset(), m.mean_offset());

        let bad = json.replace("\"version\": 1", "\"version\": 99");
        assert!(GPModel::from_artifact_json(&bad).is_err());
    }

    #[test]
    fn variance_never_exceeds_prior_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>() * 2.0);
        let y = DVector::from_fn(10, |_, _| rng.random::<f64>());
        let params = params2([0.5, 0.5], 1.7, 0.2);
        let m = GPModel::from_params(x, y, params.clone()).unwrap();
        let q = DMatrix::from_fn(30, 2, |_, _| rng.random::<f64>() * 4.0 - 1.0);
        for p in m.predict(&q, true).unwrap() {
            assert!(p.variance >= 0.0);
            assert!(p.variance <= params.signal_variance * (1.0 + params.nugget) + 1e-9);
        }
    }
}
