//! Discrepancy (bias) estimation and inverse-variance fusion.
//!
//! Field observations are modeled as simulator output plus a smooth bias
//! plus noise. The surrogate for the simulator is fit on its own data and
//! frozen; the discrepancy GP is then trained on field-minus-surrogate
//! residuals (modularized rather than joint). Independently trained
//! predictors are combined per point by inverse-variance weighting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig, GPModel, Prediction};
use crate::localgp::{local_predict, LocalConfig};

/// Floor applied to variances before inversion; the weighting formula is
/// undefined at zero variance (e.g. at interpolated training sites).
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// A trained predictor: either a global GP or data plus a local-GP config.
#[derive(Debug, Clone)]
pub enum PredictorHandle {
    Global(GPModel),
    Local {
        x: DMatrix<f64>,
        y: DVector<f64>,
        cfg: LocalConfig,
    },
}

impl PredictorHandle {
    pub fn predict(&self, xnew: &DMatrix<f64>, include_noise: bool) -> Result<Vec<Prediction>> {
        match self {
            PredictorHandle::Global(m) => m.predict(xnew, include_noise),
            PredictorHandle::Local { x, y, cfg } => local_predict(x, y, xnew, cfg, include_noise),
        }
    }
}

/// How to train the discrepancy predictor.
#[derive(Debug, Clone)]
pub enum EngineCfg {
    Global(FitConfig),
    Local(LocalConfig),
}

/// Frozen surrogate plus a discrepancy model trained on residuals.
#[derive(Debug, Clone)]
pub struct BiasModel {
    pub surrogate: PredictorHandle,
    pub discrepancy: PredictorHandle,
    /// Field-noise estimate: the discrepancy GP's nugget in response units
    /// (zero for a local discrepancy, whose nugget varies per query).
    pub noise_var: f64,
}

/// Train a discrepancy model on `field_y` minus the surrogate's fitted
/// values at the field sites. The surrogate is stored as-is; its
/// hyperparameters are never refit here.
pub fn fit_bias(
    surrogate: PredictorHandle,
    field_x: &DMatrix<f64>,
    field_y: &DVector<f64>,
    surrogate_pred_at_field: &[Prediction],
    disc_engine: &EngineCfg,
) -> Result<BiasModel> {
    let n = field_x.nrows();
    if field_y.len() != n || surrogate_pred_at_field.len() != n {
        return Err(Error::Shape(format!(
            "field X has {n} rows, y has {}, surrogate predictions {}",
            field_y.len(),
            surrogate_pred_at_field.len()
        )));
    }
    if n < 5 {
        return Err(Error::InsufficientData {
            required: 5,
            actual: n,
            context: "discrepancy fit".into(),
        });
    }
    let residuals = DVector::from_fn(n, |i, _| field_y[i] - surrogate_pred_at_field[i].mean);
    let (discrepancy, noise_var) = match disc_engine {
        EngineCfg::Global(fit) => {
            let m = fit_gp(field_x, &residuals, fit)?;
            let nv = m.params().noise_variance();
            (PredictorHandle::Global(m), nv)
        }
        EngineCfg::Local(cfg) => (
            PredictorHandle::Local {
                x: field_x.clone(),
                y: residuals,
                cfg: cfg.clone(),
            },
            0.0,
        ),
    };
    Ok(BiasModel {
        surrogate,
        discrepancy,
        noise_var,
    })
}

/// Bias-corrected prediction at each row of `xnew`.
///
/// Without `true_sim`: mean is surrogate plus estimated bias and the
/// variance sums the surrogate's latent variance with the discrepancy
/// variance (which includes its nugget, the field-noise term). With
/// `true_sim` supplying actual simulator values per row, the mean is that
/// value plus estimated bias and only the discrepancy variance remains.
pub fn bias_corrected_predict(
    bm: &BiasModel,
    xnew: &DMatrix<f64>,
    true_sim: Option<&[f64]>,
) -> Result<Vec<Prediction>> {
    let disc = bm.discrepancy.predict(xnew, true)?;
    match true_sim {
        Some(vals) => {
            if vals.len() != xnew.nrows() {
                return Err(Error::Coverage(format!(
                    "true simulator values cover {} of {} query rows",
                    vals.len(),
                    xnew.nrows()
                )));
            }
            Ok(disc
                .iter()
                .zip(vals)
                .map(|(d, v)| Prediction {
                    mean: v + d.mean,
                    variance: d.variance,
                })
                .collect())
        }
        None => {
            let surr = bm.surrogate.predict(xnew, false)?;
            Ok(surr
                .iter()
                .zip(&disc)
                .map(|(s, d)| Prediction {
                    mean: s.mean + d.mean,
                    variance: s.variance + d.variance,
                })
                .collect())
        }
    }
}

/// Inverse-variance weighted combination of independent predictions.
///
/// Weights are the reciprocals of the (floored) variances; the fused
/// variance is the reciprocal of the summed weights.
pub fn ivw_fuse(components: &[Prediction]) -> Result<Prediction> {
    if components.is_empty() {
        return Err(Error::EmptyInput("no components to fuse".into()));
    }
    let mut wsum = 0.0;
    let mut wmean = 0.0;
    for c in components {
        let v = c.variance.max(VARIANCE_FLOOR);
        let w = 1.0 / v;
        wsum += w;
        wmean += w * c.mean;
    }
    Ok(Prediction {
        mean: wmean / wsum,
        variance: 1.0 / wsum,
    })
}

/// Fuse aligned per-source prediction vectors point by point.
pub fn ivw_fuse_rows(sources: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    if sources.is_empty() {
        return Err(Error::EmptyInput("no sources to fuse".into()));
    }
    let m = sources[0].len();
    if sources.iter().any(|s| s.len() != m) {
        return Err(Error::Shape("fusion sources have unequal lengths".into()));
    }
    (0..m)
        .map(|i| {
            let comps: Vec<Prediction> = sources.iter().map(|s| s[i]).collect();
            ivw_fuse(&comps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pred(mean: f64, variance: f64) -> Prediction {
        Prediction { mean, variance }
    }

    #[test]
    fn fuse_equal_variances() {
        let out = ivw_fuse(&[pred(10.0, 2.0), pred(20.0, 2.0)]).unwrap();
        assert_relative_eq!(out.mean, 15.0);
        assert_relative_eq!(out.variance, 1.0);
    }

    #[test]
    fn fuse_single_source_is_identity() {
        let out = ivw_fuse(&[pred(7.5, 0.4)]).unwrap();
        assert_relative_eq!(out.mean, 7.5);
        assert_relative_eq!(out.variance, 0.4);
    }

    #[test]
    fn fuse_three_sources_hand_case() {
        let out = ivw_fuse(&[pred(1.0, 1.0), pred(2.0, 4.0), pred(3.0, 0.25)]).unwrap();
        assert_relative_eq!(out.mean, 13.5 / 5.25, epsilon = 1e-12);
        assert_relative_eq!(out.variance, 1.0 / 5.25, epsilon = 1e-12);
    }

    #[test]
    fn fuse_empty_is_error() {
        assert!(matches!(ivw_fuse(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fused_variance_below_min_and_mean_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let comps: Vec<Prediction> = (0..2 + (rng.random::<u32>() % 4) as usize)
                .map(|_| pred(rng.random::<f64>() * 10.0, 0.1 + rng.random::<f64>()))
                .collect();
            let out = ivw_fuse(&comps).unwrap();
            let vmin = comps.iter().map(|c| c.variance).fold(f64::INFINITY, f64::min);
            let (mn, mx) = comps
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                    (a.min(c.mean), b.max(c.mean))
                });
            assert!(out.variance < vmin, "fused {} vs min {vmin}", out.variance);
            assert!(out.mean >= mn - 1e-12 && out.mean <= mx + 1e-12);
        }
    }

    #[test]
    fn variance_scaling_leaves_mean_unchanged() {
        let comps = [pred(3.0, 0.5), pred(-1.0, 2.0), pred(0.7, 1.3)];
        let base = ivw_fuse(&comps).unwrap();
        for c in [0.1, 2.0, 55.0] {
            let scaled: Vec<Prediction> =
                comps.iter().map(|p| pred(p.mean, p.variance * c)).collect();
            let out = ivw_fuse(&scaled).unwrap();
            assert_relative_eq!(out.mean, base.mean, epsilon = 1e-12);
            assert_relative_eq!(out.variance, base.variance * c, max_relative = 1e-12);
        }
    }

    fn site_grid(n_side: usize) -> DMatrix<f64> {
        let mut rows = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                rows.push([
                    30.0 + 10.0 * i as f64 / (n_side - 1) as f64,
                    -110.0 + 20.0 * j as f64 / (n_side - 1) as f64,
                ]);
            }
        }
        DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c])
    }

    fn fit_cfg(seed: u64) -> FitConfig {
        FitConfig {
            n_starts: 3,
            max_iter: 60,
            seed,
        }
    }

    #[test]
    fn zero_residuals_reduce_to_surrogate() {
        let x = site_grid(4);
        let sim = DVector::from_fn(x.nrows(), |i, _| {
            200.0 + 3.0 * (x[(i, 0)] - 35.0) + 0.5 * (x[(i, 1)] + 100.0)
        });
        let surr = fit_gp(&x, &sim, &fit_cfg(2)).unwrap();
        let fitted = surr.predict(&x, false).unwrap();
        let field = DVector::from_fn(x.nrows(), |i, _| fitted[i].mean);
        let bm = fit_bias(
            PredictorHandle::Global(surr.clone()),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(3)),
        )
        .unwrap();
        let q = site_grid(3);
        let corrected = bias_corrected_predict(&bm, &q, None).unwrap();
        let raw = surr.predict(&q, false).unwrap();
        for (c, r) in corrected.iter().zip(&raw) {
            // Zero residuals give an exactly zero bias mean; the added
            // discrepancy variance collapses to the fit floor.
            assert_relative_eq!(c.mean, r.mean, epsilon = 1e-9);
            assert!((c.variance - r.variance).abs() < 1e-6);
        }
        let disc = bm.discrepancy.predict(&q, true).unwrap();
        for d in &disc {
            assert!(d.mean.abs() <= 2.0 * d.variance.sqrt() + 1e-9);
        }
    }

    #[test]
    fn constant_bias_recovered_within_band() {
        let x = site_grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sim = DVector::from_fn(x.nrows(), |i, _| {
            150.0 + 2.0 * ((x[(i, 0)] - 35.0) * 0.3).sin() * 10.0 + 0.3 * (x[(i, 1)] + 100.0)
        });
        let surr = fit_gp(&x, &sim, &fit_cfg(4)).unwrap();
        let fitted = surr.predict(&x, false).unwrap();
        let field = DVector::from_fn(x.nrows(), |i, _| {
            fitted[i].mean + 7.0 + 0.2 * (rng.random::<f64>() - 0.5)
        });
        let bm = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(5)),
        )
        .unwrap();
        // Interior grid of the site hull.
        let q = DMatrix::from_fn(16, 2, |r, c| {
            if c == 0 {
                32.0 + 6.0 * (r / 4) as f64 / 3.0
            } else {
                -108.0 + 16.0 * (r % 4) as f64 / 3.0
            }
        });
        let disc = bm.discrepancy.predict(&q, false).unwrap();
        for d in &disc {
            assert!(
                d.mean > 6.0 && d.mean < 8.0,
                "bias estimate {} outside [6, 8]",
                d.mean
            );
        }
    }

    #[test]
    fn planted_sinusoid_bias_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                30.0 + 10.0 * rng.random::<f64>()
            } else {
                -110.0 + 20.0 * rng.random::<f64>()
            }
        });
        let sim = DVector::from_fn(n, |i, _| 180.0 + 2.5 * (x[(i, 0)] - 35.0));
        let surr = fit_gp(&x, &sim, &fit_cfg(6)).unwrap();
        let fitted = surr.predict(&x, false).unwrap();
        let truth = |lon: f64| 10.0 * (lon * 0.5).sin();
        let field = DVector::from_fn(n, |i, _| {
            fitted[i].mean + truth(x[(i, 1)]) + 0.5 * (rng.random::<f64>() - 0.5)
        });
        let bm = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(7)),
        )
        .unwrap();
        // Held-out grid inside the hull.
        let m = 50;
        let q = DMatrix::from_fn(m, 2, |r, c| {
            if c == 0 {
                32.0 + 6.0 * (r / 10) as f64 / 4.0
            } else {
                -108.0 + 16.0 * (r % 10) as f64 / 9.0
            }
        });
        let disc = bm.discrepancy.predict(&q, false).unwrap();
        let est: Vec<f64> = disc.iter().map(|d| d.mean).collect();
        let want: Vec<f64> = (0..m).map(|r| truth(q[(r, 1)])).collect();
        let corr = correlation(&est, &want);
        assert!(corr >= 0.9, "correlation {corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn true_sim_variances_strictly_smaller() {
        let x = site_grid(4);
        let sim = DVector::from_fn(x.nrows(), |i, _| 100.0 + x[(i, 0)] + x[(i, 1)] * 0.1);
        let surr = fit_gp(&x, &sim, &fit_cfg(9)).unwrap();
        let fitted = surr.predict(&x, false).unwrap();
        let field = DVector::from_fn(x.nrows(), |i, _| fitted[i].mean + 3.0);
        let bm = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(10)),
        )
        .unwrap();
        let q = site_grid(3);
        let sim_at_q: Vec<f64> = (0..q.nrows()).map(|i| 100.0 + q[(i, 0)]).collect();
        let with_surr = bias_corrected_predict(&bm, &q, None).unwrap();
        let with_true = bias_corrected_predict(&bm, &q, Some(&sim_at_q)).unwrap();
        for (a, b) in with_surr.iter().zip(&with_true) {
            assert!(a.variance > b.variance);
        }
    }

    #[test]
    fn true_sim_requires_full_coverage() {
        let x = site_grid(4);
        let sim = DVector::from_fn(x.nrows(), |i, _| 100.0 + x[(i, 0)]);
        let surr = fit_gp(&x, &sim, &fit_cfg(11)).unwrap();
        let fitted = surr.predict(&x, false).unwrap();
        let field = sim.clone();
        let bm = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(12)),
        )
        .unwrap();
        let q = site_grid(3);
        let short = vec![1.0; q.nrows() - 1];
        let err = bias_corrected_predict(&bm, &q, Some(&short)).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
    }

    #[test]
    fn modularity_surrogate_params_frozen() {
        let x = site_grid(4);
        let sim = DVector::from_fn(x.nrows(), |i, _| 120.0 + 2.0 * x[(i, 0)]);
        let surr = fit_gp(&x, &sim, &fit_cfg(13)).unwrap();
        let before = surr.params().clone();
        let fitted = surr.predict(&x, false).unwrap();
        let field = DVector::from_fn(x.nrows(), |i, _| fitted[i].mean + 1.0);
        let bm = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &field,
            &fitted,
            &EngineCfg::Global(fit_cfg(14)),
        )
        .unwrap();
        match &bm.surrogate {
            PredictorHandle::Global(m) => assert_eq!(m.params(), &before),
            _ => unreachable!(),
        }
    }

    #[test]
    fn short_residual_vector_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0., 0., 1.]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let preds = vec![pred(1.0, 0.1); 3];
        let x5 = DMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        let y5 = DVector::from_fn(5, |i, _| i as f64 + 1.0);
        let surr = fit_gp(&x5, &y5, &fit_cfg(15)).unwrap();
        let err = fit_bias(
            PredictorHandle::Global(surr),
            &x,
            &y,
            &preds,
            &EngineCfg::Global(fit_cfg(16)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }));
    }
}
