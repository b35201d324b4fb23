//! Space-time modeling: per-site harmonic regression with GP smoothing of
//! the coefficient fields, daily bias correction on residuals, and a simple
//! autoregressive/periodic per-site regression.
//!
//! Each site's series is summarized by an intercept plus yearly sine and
//! cosine terms via OLS; a GP per coefficient then smooths the estimates
//! over space so nearby sites borrow strength. Pushing smoothed
//! coefficients back through the harmonic form gives daily predictions,
//! with variance propagated by squaring the trigonometric weights.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Site, SourceId};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig, GPModel, KernelParams, Prediction};

/// Period of the yearly harmonic, in days.
pub const SEASONAL_PERIOD: f64 = 365.0;

/// Default minimum observation count for a per-site OLS fit.
pub const DEFAULT_MIN_OBS: usize = 10;

fn harmonic_weights(day: u32) -> [f64; 3] {
    let arg = 2.0 * std::f64::consts::PI * day as f64 / SEASONAL_PERIOD;
    [1.0, arg.sin(), arg.cos()]
}

/// Per-site harmonic regression estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicCoeffs {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub resid_var: f64,
    pub n_obs: usize,
}

impl HarmonicCoeffs {
    pub fn beta(&self, k: usize) -> f64 {
        [self.beta0, self.beta1, self.beta2][k]
    }
}

/// Which regressors enter the per-site fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarmonicBasis {
    /// Intercept, sine, cosine.
    Full,
    /// Intercept only; the harmonic coefficients are pinned to zero. Reduces
    /// the space-time model to smoothing of per-site means.
    InterceptOnly,
}

/// Settings for the seasonal pipeline.
#[derive(Debug, Clone)]
pub struct SeasonalConfig {
    pub min_obs: usize,
    pub basis: HarmonicBasis,
    /// Fit settings for the coefficient-field GPs; coefficient `k` uses
    /// `fit.seed + k` so the intercept field matches a plain GP fit on
    /// per-site means run with the same seed.
    pub fit: FitConfig,
}

impl Default for SeasonalConfig {
    fn default() -> Self {
        SeasonalConfig {
            min_obs: DEFAULT_MIN_OBS,
            basis: HarmonicBasis::Full,
            fit: FitConfig::default(),
        }
    }
}

/// OLS fit of `value ~ 1 + sin(2 pi day/365) + cos(2 pi day/365)`.
///
/// The residual variance uses denominator `n - 3` (`n - 1` for the
/// intercept-only basis), clamped at zero for saturated fits.
pub fn fit_site_ols(
    series: &[(u32, f64)],
    basis: HarmonicBasis,
    min_obs: usize,
) -> Result<HarmonicCoeffs> {
    let n = series.len();
    if n < min_obs {
        return Err(Error::InsufficientData {
            required: min_obs,
            actual: n,
            context: "per-site harmonic OLS".into(),
        });
    }
    match basis {
        HarmonicBasis::InterceptOnly => {
            let mean = series.iter().map(|&(_, v)| v).sum::<f64>() / n as f64;
            let ssr: f64 = series.iter().map(|&(_, v)| (v - mean) * (v - mean)).sum();
            let dof = n.saturating_sub(1);
            Ok(HarmonicCoeffs {
                beta0: mean,
                beta1: 0.0,
                beta2: 0.0,
                resid_var: if dof > 0 { ssr / dof as f64 } else { 0.0 },
                n_obs: n,
            })
        }
        HarmonicBasis::Full => {
            let mut xtx = DMatrix::<f64>::zeros(3, 3);
            let mut xty = DVector::<f64>::zeros(3);
            for &(day, v) in series {
                let w = harmonic_weights(day);
                for a in 0..3 {
                    for b in 0..3 {
                        xtx[(a, b)] += w[a] * w[b];
                    }
                    xty[a] += w[a] * v;
                }
            }
            let chol = nalgebra::Cholesky::new(xtx).ok_or_else(|| {
                Error::SingularDesign(
                    "harmonic design is rank deficient (e.g. all observations on one day)".into(),
                )
            })?;
            let beta = chol.solve(&xty);
            let ssr: f64 = series
                .iter()
                .map(|&(day, v)| {
                    let w = harmonic_weights(day);
                    let fit = w[0] * beta[0] + w[1] * beta[1] + w[2] * beta[2];
                    (v - fit) * (v - fit)
                })
                .sum();
            let dof = n.saturating_sub(3);
            Ok(HarmonicCoeffs {
                beta0: beta[0],
                beta1: beta[1],
                beta2: beta[2],
                resid_var: if dof > 0 { (ssr / dof as f64).max(0.0) } else { 0.0 },
                n_obs: n,
            })
        }
    }
}

/// GP-smoothed coefficient fields for one data source.
#[derive(Debug, Clone)]
pub struct CoeffField {
    fields: [GPModel; 3],
    pub source: SourceId,
    /// Mean OLS residual variance across training sites; the pipeline's
    /// estimate of day-level observation noise.
    pub pooled_resid_var: f64,
    pub train_sites: Vec<Site>,
    /// Raw OLS estimates aligned with `train_sites`, kept for export.
    pub beta_hat: Vec<[f64; 3]>,
    /// Sites dropped for insufficient data or a singular design.
    pub excluded_sites: Vec<Site>,
}

/// Smoothed coefficient posteriors at one location.
#[derive(Debug, Clone, Copy)]
pub struct CoeffPrediction {
    pub coeffs: [Prediction; 3],
}

impl CoeffPrediction {
    /// Push coefficients through the harmonic form for one day. The
    /// variance combines the coefficient variances with squared
    /// trigonometric weights, treating the three posteriors as independent.
    pub fn at_day(&self, day: u32) -> Prediction {
        let w = harmonic_weights(day);
        let mut mean = 0.0;
        let mut variance = 0.0;
        for k in 0..3 {
            mean += w[k] * self.coeffs[k].mean;
            variance += w[k] * w[k] * self.coeffs[k].variance;
        }
        Prediction { mean, variance }
    }
}

/// How the three coefficient-field GPs are trained.
#[derive(Debug, Clone)]
pub enum CoeffFitMode {
    /// Multi-start fit per coefficient, seeded from the config.
    Fresh,
    /// Single-start refit from previously estimated hyperparameters.
    Warm {
        init: [KernelParams; 3],
        max_iter: usize,
    },
    /// Reuse hyperparameters as-is; only the factorization is redone.
    Fixed([KernelParams; 3]),
}

/// Fit one GP per coefficient over site coordinates.
///
/// Items are sorted by site id before fitting, so the result does not
/// depend on input order. Requires at least 5 sites.
pub fn smooth_coefficients(
    items: &[(Site, HarmonicCoeffs)],
    source: SourceId,
    cfg: &SeasonalConfig,
) -> Result<CoeffField> {
    smooth_with_exclusions(items.to_vec(), Vec::new(), source, cfg, &CoeffFitMode::Fresh)
}

fn smooth_with_exclusions(
    mut items: Vec<(Site, HarmonicCoeffs)>,
    excluded_sites: Vec<Site>,
    source: SourceId,
    cfg: &SeasonalConfig,
    mode: &CoeffFitMode,
) -> Result<CoeffField> {
    if items.len() < 5 {
        return Err(Error::InsufficientData {
            required: 5,
            actual: items.len(),
            context: "coefficient-field smoothing".into(),
        });
    }
    items.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let n = items.len();
    let x = DMatrix::from_fn(n, 2, |i, c| {
        if c == 0 {
            items[i].0.lat
        } else {
            items[i].0.lon
        }
    });
    let mut fields = Vec::with_capacity(3);
    for k in 0..3 {
        let y = DVector::from_fn(n, |i, _| items[i].1.beta(k));
        let model = match mode {
            CoeffFitMode::Fresh => {
                let fit_cfg = FitConfig {
                    seed: cfg.fit.seed.wrapping_add(k as u64),
                    ..cfg.fit.clone()
                };
                fit_gp(&x, &y, &fit_cfg)
            }
            CoeffFitMode::Warm { init, max_iter } => {
                crate::gp::fit_gp_warm(&x, &y, &init[k], *max_iter)
            }
            CoeffFitMode::Fixed(init) => GPModel::from_params(x.clone(), y, init[k].clone()),
        }
        .map_err(|e| Error::FitFailure(format!("coefficient field {k} ({source}): {e}")))?;
        fields.push(model);
    }
    let fields: [GPModel; 3] = fields.try_into().expect("three coefficient fields");
    let pooled_resid_var =
        items.iter().map(|(_, c)| c.resid_var).sum::<f64>() / n as f64;
    Ok(CoeffField {
        fields,
        source,
        pooled_resid_var,
        train_sites: items.iter().map(|(s, _)| s.clone()).collect(),
        beta_hat: items
            .iter()
            .map(|(_, c)| [c.beta0, c.beta1, c.beta2])
            .collect(),
        excluded_sites,
    })
}

/// Per-site OLS followed by coefficient smoothing for one source.
///
/// Sites with fewer than `cfg.min_obs` observations, or a singular design,
/// are excluded from training and recorded on the result.
pub fn fit_coeff_field(ds: &Dataset, source: SourceId, cfg: &SeasonalConfig) -> Result<CoeffField> {
    fit_coeff_field_mode(ds, source, cfg, &CoeffFitMode::Fresh)
}

/// As [`fit_coeff_field`] with an explicit coefficient fit mode.
pub fn fit_coeff_field_mode(
    ds: &Dataset,
    source: SourceId,
    cfg: &SeasonalConfig,
    mode: &CoeffFitMode,
) -> Result<CoeffField> {
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (i, site) in ds.sites().iter().enumerate() {
        let series = ds.site_series(i, source);
        if series.len() < cfg.min_obs {
            excluded.push(site.clone());
            continue;
        }
        match fit_site_ols(&series, cfg.basis, cfg.min_obs) {
            Ok(c) => items.push((site.clone(), c)),
            Err(Error::SingularDesign(_)) => excluded.push(site.clone()),
            Err(e) => return Err(e),
        }
    }
    smooth_with_exclusions(items, excluded, source, cfg, mode)
}

impl CoeffField {
    pub fn fields(&self) -> &[GPModel; 3] {
        &self.fields
    }

    /// Smoothed coefficient posteriors at each query location (lat, lon).
    pub fn coeff_predict(&self, xnew: &DMatrix<f64>) -> Result<Vec<CoeffPrediction>> {
        let per_field: Vec<Vec<Prediction>> = self
            .fields
            .iter()
            .map(|m| m.predict(xnew, false))
            .collect::<Result<_>>()?;
        Ok((0..xnew.nrows())
            .map(|i| CoeffPrediction {
                coeffs: [per_field[0][i], per_field[1][i], per_field[2][i]],
            })
            .collect())
    }

    /// Daily prediction at a single location.
    pub fn predict_at(&self, lat: f64, lon: f64, day: u32) -> Result<Prediction> {
        let x = DMatrix::from_row_slice(1, 2, &[lat, lon]);
        Ok(self.coeff_predict(&x)?[0].at_day(day))
    }
}

/// Daily prediction from smoothed coefficient fields.
pub fn seasonal_predict(cf: &CoeffField, lat: f64, lon: f64, day: u32) -> Result<Prediction> {
    cf.predict_at(lat, lon, day)
}

/// Seasonal surrogate plus a seasonal discrepancy model fit on space-time
/// residuals.
#[derive(Debug, Clone)]
pub struct SeasonalBiasModel {
    pub surrogate: CoeffField,
    pub discrepancy: CoeffField,
}

/// Fit the space-time bias pipeline: a coefficient field on the simulator
/// data, residuals of observed field values against its fitted values, and
/// a second coefficient field on those residuals.
pub fn seasonal_bias_pipeline(
    field_ds: &Dataset,
    sim_ds: &Dataset,
    sim_source: SourceId,
    cfg: &SeasonalConfig,
) -> Result<SeasonalBiasModel> {
    seasonal_bias_pipeline_mode(
        field_ds,
        sim_ds,
        sim_source,
        cfg,
        &CoeffFitMode::Fresh,
        &CoeffFitMode::Fresh,
    )
}

/// As [`seasonal_bias_pipeline`] with explicit fit modes for the surrogate
/// and discrepancy coefficient fields.
pub fn seasonal_bias_pipeline_mode(
    field_ds: &Dataset,
    sim_ds: &Dataset,
    sim_source: SourceId,
    cfg: &SeasonalConfig,
    surr_mode: &CoeffFitMode,
    disc_mode: &CoeffFitMode,
) -> Result<SeasonalBiasModel> {
    let surrogate = fit_coeff_field_mode(sim_ds, sim_source, cfg, surr_mode)?;

    let n_field = field_ds.n_sites();
    let xf = DMatrix::from_fn(n_field, 2, |i, c| {
        let s = &field_ds.sites()[i];
        if c == 0 {
            s.lat
        } else {
            s.lon
        }
    });
    let cps = surrogate.coeff_predict(&xf)?;
    let resid = field_ds.residual_series(SourceId::Field, |site_idx, day| {
        Some(cps[site_idx].at_day(day).mean)
    })?;

    let disc_cfg = SeasonalConfig {
        fit: FitConfig {
            seed: cfg.fit.seed ^ 0x9e37_79b9,
            ..cfg.fit.clone()
        },
        ..cfg.clone()
    };
    let discrepancy = fit_coeff_field_mode(&resid, SourceId::Field, &disc_cfg, disc_mode)?;
    Ok(SeasonalBiasModel {
        surrogate,
        discrepancy,
    })
}

impl SeasonalBiasModel {
    /// Bias-corrected daily prediction: surrogate plus discrepancy, with
    /// summed variances.
    pub fn predict_at(&self, xnew: &DMatrix<f64>, day: u32) -> Result<Vec<Prediction>> {
        let s = self.surrogate.coeff_predict(xnew)?;
        let d = self.discrepancy.coeff_predict(xnew)?;
        Ok(s.iter()
            .zip(&d)
            .map(|(sp, dp)| {
                let a = sp.at_day(day);
                let b = dp.at_day(day);
                Prediction {
                    mean: a.mean + b.mean,
                    variance: a.variance + b.variance,
                }
            })
            .collect())
    }

    /// As [`SeasonalBiasModel::predict_at`] but with actual simulator values
    /// supplied per query row; only the discrepancy contributes variance.
    pub fn predict_with_true_sim(
        &self,
        sim_values: &[f64],
        xnew: &DMatrix<f64>,
        day: u32,
    ) -> Result<Vec<Prediction>> {
        if sim_values.len() != xnew.nrows() {
            return Err(Error::Coverage(format!(
                "true simulator values cover {} of {} query rows",
                sim_values.len(),
                xnew.nrows()
            )));
        }
        let d = self.discrepancy.coeff_predict(xnew)?;
        Ok(d.iter()
            .zip(sim_values)
            .map(|(dp, v)| {
                let b = dp.at_day(day);
                Prediction {
                    mean: v + b.mean,
                    variance: b.variance,
                }
            })
            .collect())
    }
}

/// Coefficients of the autoregressive/periodic per-site regression:
/// intercept, sine, cosine, lag-1 field, and the two simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ARCoeffs {
    pub beta: [f64; 6],
    pub sigma2: f64,
    pub n_rows: usize,
}

/// Fit the per-site autoregressive/periodic regression on days where the
/// field value, its previous-day value, and both simulator values are all
/// observed. Returns the coefficients and the in-sample fitted series; no
/// forward forecasting is attempted.
///
/// Regressor columns that are identically zero (e.g. a simulator with no
/// signal) are dropped from the solve and their coefficients reported as
/// zero.
pub fn fit_ar_seasonal(
    field: &[(u32, f64)],
    sim_a: &[(u32, f64)],
    sim_b: &[(u32, f64)],
) -> Result<(ARCoeffs, Vec<(u32, f64)>)> {
    use std::collections::BTreeMap;
    let fm: BTreeMap<u32, f64> = field.iter().copied().collect();
    let am: BTreeMap<u32, f64> = sim_a.iter().copied().collect();
    let bm: BTreeMap<u32, f64> = sim_b.iter().copied().collect();

    let mut days = Vec::new();
    let mut rows: Vec<[f64; 6]> = Vec::new();
    let mut targets = Vec::new();
    for (&t, &y) in &fm {
        if t == 0 {
            continue;
        }
        let (Some(&prev), Some(&a), Some(&b)) = (fm.get(&(t - 1)), am.get(&t), bm.get(&t)) else {
            continue;
        };
        let w = harmonic_weights(t);
        rows.push([w[0], w[1], w[2], prev, a, b]);
        targets.push(y);
        days.push(t);
    }
    let n = rows.len();
    if n < 20 {
        return Err(Error::InsufficientData {
            required: 20,
            actual: n,
            context: "autoregressive seasonal fit (complete rows)".into(),
        });
    }

    // Keep columns with any signal; identically-zero columns are dropped.
    let active: Vec<usize> = (0..6)
        .filter(|&c| rows.iter().any(|r| r[c] != 0.0))
        .collect();
    let p = active.len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (r, &y) in rows.iter().zip(&targets) {
        for (ai, &ca) in active.iter().enumerate() {
            for (bi, &cb) in active.iter().enumerate() {
                xtx[(ai, bi)] += r[ca] * r[cb];
            }
            xty[ai] += r[ca] * y;
        }
    }
    let chol = nalgebra::Cholesky::new(xtx).ok_or_else(|| {
        Error::SingularDesign("autoregressive seasonal design is rank deficient".into())
    })?;
    let sol = chol.solve(&xty);
    let mut beta = [0.0f64; 6];
    for (ai, &ca) in active.iter().enumerate() {
        beta[ca] = sol[ai];
    }

    let mut fitted = Vec::with_capacity(n);
    let mut ssr = 0.0;
    for ((r, &y), &t) in rows.iter().zip(&targets).zip(&days) {
        let f: f64 = (0..6).map(|c| beta[c] * r[c]).sum();
        ssr += (y - f) * (y - f);
        fitted.push((t, f));
    }
    let dof = n.saturating_sub(p);
    Ok((
        ARCoeffs {
            beta,
            sigma2: if dof > 0 { ssr / dof as f64 } else { 0.0 },
            n_rows: n,
        },
        fitted,
    ))
}
