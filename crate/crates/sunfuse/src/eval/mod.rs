//! Leave-one-site-out cross validation over the comparator cascade, with
//! report assembly in the benchmark's row layout.
//!
//! Each fold holds out every observation at one site, retrains the full
//! pipeline on the remaining sites, and scores predictions for the held-out
//! values. Folds run in parallel over a read-only dataset; per-fold seeds
//! derive from the fold index, so results do not depend on execution order
//! or thread count.

pub mod comparators;
pub mod metrics;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use comparators::{
    fit_comparator, Engine, EvalConfig, ModelKind, RefitMode, TimeScale, TrainedComparator,
};
pub use metrics::{coverage95, paired_log_t_test, proper_score, rmse, Z95};

use crate::data::{Dataset, Site, SourceId};
use crate::error::{Error, Result};
use crate::gp::Prediction;
use comparators::{
    build_agg_components, build_daily_components, needs_for, predict_agg, predict_daily, AggData,
};

/// Metrics for one held-out site under one comparator.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub site: Site,
    pub n_obs: usize,
    pub rmse: f64,
    pub covered_frac: f64,
    /// Per-observation log squared errors (floored before the log).
    pub log_sq_errors: Vec<f64>,
    /// Mean squared error of the fold; the per-fold quantity entering
    /// paired significance tests.
    pub mse: f64,
    /// Set when the comparator could not be evaluated on this fold.
    pub failed: Option<String>,
}

impl FoldResult {
    fn failure(site: Site, msg: String) -> FoldResult {
        FoldResult {
            site,
            n_obs: 0,
            rmse: f64::NAN,
            covered_frac: f64::NAN,
            log_sq_errors: Vec::new(),
            mse: f64::NAN,
            failed: Some(msg),
        }
    }
}

/// Assemble fold metrics from aligned predictions and observations.
pub fn fold_metrics(site: Site, preds: &[Prediction], obs: &[f64]) -> FoldResult {
    if preds.is_empty() || preds.len() != obs.len() {
        return FoldResult::failure(
            site,
            format!("{} predictions vs {} observations", preds.len(), obs.len()),
        );
    }
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let rmse_v = metrics::rmse(&means, obs).expect("aligned");
    let cov = metrics::coverage95(preds, obs).expect("aligned");
    let sq: Vec<f64> = means
        .iter()
        .zip(obs)
        .map(|(m, o)| (m - o) * (m - o))
        .collect();
    let mse = sq.iter().sum::<f64>() / sq.len() as f64;
    FoldResult {
        site,
        n_obs: obs.len(),
        rmse: rmse_v,
        covered_frac: cov,
        log_sq_errors: sq.iter().map(|e| e.max(metrics::LOG_FLOOR).ln()).collect(),
        mse,
        failed: None,
    }
}

/// LOO-CV folds for every requested comparator, sharing per-fold model fits.
pub struct SuiteEntry {
    pub model: ModelKind,
    pub folds: Vec<FoldResult>,
}

/// Run leave-one-site-out cross validation for a set of comparators.
pub fn run_loo_suite(
    ds: &Dataset,
    models: &[ModelKind],
    cfg: &EvalConfig,
) -> Result<Vec<SuiteEntry>> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no comparators requested".into()));
    }
    if matches!(cfg.timescale, TimeScale::Daily) && matches!(cfg.engine, Engine::Local(_)) {
        return Err(Error::Unsupported(
            "local engine applies to aggregated data only".into(),
        ));
    }
    let needs = needs_for(models);
    let want_warm = !matches!(cfg.refit, RefitMode::FullRestarts);

    // Folds iterate over the field stations; sites carrying only simulator
    // data (design augmentation) stay in training for every fold.
    let fold_sites: Vec<usize> = (0..ds.n_sites())
        .filter(|&i| !ds.site_series(i, SourceId::Field).is_empty())
        .collect();
    if fold_sites.is_empty() {
        return Err(Error::EmptyInput(
            "dataset has no field observations to hold out".into(),
        ));
    }

    let per_fold: Vec<Vec<FoldResult>> = match cfg.timescale {
        TimeScale::Aggregated => {
            let agg = AggData::build(ds)?;
            let full = want_warm.then(|| build_agg_components(&agg, None, &needs, cfg, None, 0));
            fold_sites
                .par_iter()
                .map(|&i| {
                    let comps = build_agg_components(
                        &agg,
                        Some(i),
                        &needs,
                        cfg,
                        full.as_ref(),
                        (i + 1) as u64,
                    );
                    let site = agg.sites[i].clone();
                    let pts = DMatrix::from_row_slice(1, 2, &[site.lat, site.lon]);
                    let sim_cell: [Option<f64>; 2] = [
                        agg_value(&agg, SourceId::SimA, i),
                        agg_value(&agg, SourceId::SimB, i),
                    ];
                    models
                        .iter()
                        .map(|m| {
                            let target = agg_value(&agg, m.target(), i);
                            let Some(obs) = target else {
                                return FoldResult::failure(
                                    site.clone(),
                                    "held-out target value missing".into(),
                                );
                            };
                            let sim_slices: [Vec<f64>; 2] = [
                                sim_cell[0].map(|v| vec![v]).unwrap_or_default(),
                                sim_cell[1].map(|v| vec![v]).unwrap_or_default(),
                            ];
                            let sim_vals: [Option<&[f64]>; 2] = [
                                sim_cell[0].is_some().then(|| sim_slices[0].as_slice()),
                                sim_cell[1].is_some().then(|| sim_slices[1].as_slice()),
                            ];
                            match predict_agg(*m, &comps, &pts, sim_vals) {
                                Ok(p) => fold_metrics(site.clone(), &p, &[obs]),
                                Err(e) => FoldResult::failure(site.clone(), e.to_string()),
                            }
                        })
                        .collect()
                })
                .collect()
        }
        TimeScale::Daily => {
            let full = want_warm.then(|| build_daily_components(ds, &needs, cfg, None, 0));
            fold_sites
                .par_iter()
                .map(|&i| {
                    let site = ds.sites()[i].clone();
                    let train = match ds.without_site(i) {
                        Ok(t) => t,
                        Err(e) => {
                            return models
                                .iter()
                                .map(|_| FoldResult::failure(site.clone(), e.to_string()))
                                .collect();
                        }
                    };
                    let comps = build_daily_components(
                        &train,
                        &needs,
                        cfg,
                        full.as_ref(),
                        (i + 1) as u64,
                    );
                    let pts = DMatrix::from_row_slice(1, 2, &[site.lat, site.lon]);
                    models
                        .iter()
                        .map(|m| {
                            let days = eval_days(ds, i, *m);
                            if days.is_empty() {
                                return FoldResult::failure(
                                    site.clone(),
                                    "no evaluable held-out days".into(),
                                );
                            }
                            let mut preds = Vec::with_capacity(days.len());
                            let mut obs = Vec::with_capacity(days.len());
                            for &(day, target) in &days {
                                let sim_cell = [
                                    ds.value(i, day, SourceId::SimA),
                                    ds.value(i, day, SourceId::SimB),
                                ];
                                let sim_slices: [Vec<f64>; 2] = [
                                    sim_cell[0].map(|v| vec![v]).unwrap_or_default(),
                                    sim_cell[1].map(|v| vec![v]).unwrap_or_default(),
                                ];
                                let sim_vals: [Option<&[f64]>; 2] = [
                                    sim_cell[0].is_some().then(|| sim_slices[0].as_slice()),
                                    sim_cell[1].is_some().then(|| sim_slices[1].as_slice()),
                                ];
                                match predict_daily(*m, &comps, &pts, day, sim_vals) {
                                    Ok(p) => {
                                        preds.push(p[0]);
                                        obs.push(target);
                                    }
                                    Err(e) => {
                                        return FoldResult::failure(site.clone(), e.to_string())
                                    }
                                }
                            }
                            fold_metrics(site.clone(), &preds, &obs)
                        })
                        .collect()
                })
                .collect()
        }
    };

    Ok(models
        .iter()
        .enumerate()
        .map(|(mi, m)| SuiteEntry {
            model: *m,
            folds: per_fold.iter().map(|f| f[mi].clone()).collect(),
        })
        .collect())
}

fn agg_value(agg: &AggData, source: SourceId, site: usize) -> Option<f64> {
    let si = match source {
        SourceId::Field => 0,
        SourceId::SimA => 1,
        SourceId::SimB => 2,
    };
    agg.vals[si][site]
}

/// Held-out (day, target value) pairs a comparator can be scored on.
fn eval_days(ds: &Dataset, site: usize, model: ModelKind) -> Vec<(u32, f64)> {
    let target = model.target();
    let series = ds.site_series(site, target);
    series
        .into_iter()
        .filter(|&(day, _)| match model {
            ModelKind::TrueSim(s) | ModelKind::TrueSimBias(s) => ds.value(site, day, s).is_some(),
            ModelKind::TrueSimIvw => {
                ds.value(site, day, SourceId::SimA).is_some()
                    && ds.value(site, day, SourceId::SimB).is_some()
            }
            _ => true,
        })
        .collect()
}

/// LOO-CV folds for a single comparator.
pub fn loo_cv(ds: &Dataset, model: ModelKind, cfg: &EvalConfig) -> Result<Vec<FoldResult>> {
    Ok(run_loo_suite(ds, std::slice::from_ref(&model), cfg)?
        .pop()
        .expect("one entry")
        .folds)
}

/// One row of the comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: String,
    pub comparator: String,
    pub rmse: Option<f64>,
    pub cov95: Option<f64>,
    /// One-tailed p-value against the reference row (small favors this row).
    pub p: Option<f64>,
    /// 1-based index of the best earlier row with the same target.
    pub ref_row: Option<usize>,
    pub n_folds: usize,
    pub n_failed: usize,
}

/// Comparison report in the benchmark's layout, carrying per-fold errors so
/// runs can be compared against each other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    /// Per-row, per-fold mean squared errors; `None` marks a failed fold.
    pub fold_mse: Vec<Vec<Option<f64>>>,
}

impl ComparisonReport {
    pub fn from_suite(entries: &[SuiteEntry]) -> ComparisonReport {
        let fold_mse: Vec<Vec<Option<f64>>> = entries
            .iter()
            .map(|e| {
                e.folds
                    .iter()
                    .map(|f| f.failed.is_none().then_some(f.mse))
                    .collect()
            })
            .collect();

        let mut rows: Vec<ReportRow> = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let ok: Vec<&FoldResult> = e.folds.iter().filter(|f| f.failed.is_none()).collect();
            let n_failed = e.folds.len() - ok.len();
            let (rmse, cov) = if ok.is_empty() {
                (None, None)
            } else {
                (
                    Some(ok.iter().map(|f| f.rmse).sum::<f64>() / ok.len() as f64),
                    Some(ok.iter().map(|f| f.covered_frac).sum::<f64>() / ok.len() as f64),
                )
            };
            let target = e.model.target().to_string();
            // Reference: the best (lowest mean RMSE) earlier row with the
            // same target.
            let ref_row = rows
                .iter()
                .enumerate()
                .take(i)
                .filter(|(_, r)| r.target == target && r.rmse.is_some())
                .min_by(|(_, a), (_, b)| a.rmse.partial_cmp(&b.rmse).unwrap())
                .map(|(j, _)| j);
            let p = ref_row.and_then(|j| {
                let pairs: (Vec<f64>, Vec<f64>) = fold_mse[i]
                    .iter()
                    .zip(&fold_mse[j])
                    .filter_map(|(a, b)| a.zip(*b))
                    .unzip();
                (pairs.0.len() >= 2)
                    .then(|| metrics::paired_log_t_test(&pairs.0, &pairs.1).ok())
                    .flatten()
            });
            rows.push(ReportRow {
                target,
                comparator: e.model.label(),
                rmse,
                cov95: cov,
                p,
                ref_row: ref_row.map(|j| j + 1),
                n_folds: e.folds.len(),
                n_failed,
            });
        }
        ComparisonReport { rows, fold_mse }
    }

    /// CSV body with columns `target,comparator,rmse,cov95,p,ref_row`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("target,comparator,rmse,cov95,p,ref_row\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.target,
                r.comparator,
                r.rmse.map(|v| v.to_string()).unwrap_or_default(),
                r.cov95.map(|v| v.to_string()).unwrap_or_default(),
                r.p.map(|v| v.to_string()).unwrap_or_default(),
                r.ref_row.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        out
    }

    /// Fixed-width table for terminal display.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>3}  {:<6} {:<22} {:>10} {:>8} {:>12} {:>4}\n",
            "row", "target", "comparator", "rmse", "cov95", "p", "ref"
        ));
        for (i, r) in self.rows.iter().enumerate() {
            let fmt_opt = |v: Option<f64>, prec: usize| {
                v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
            };
            out.push_str(&format!(
                "{:>3}  {:<6} {:<22} {:>10} {:>8} {:>12} {:>4}\n",
                i + 1,
                r.target,
                r.comparator,
                fmt_opt(r.rmse, 4),
                fmt_opt(r.cov95, 4),
                r.p.map(|x| format!("{x:.3e}")).unwrap_or_default(),
                r.ref_row.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        out
    }

    /// Paired p-values of this run's rows against the matching rows of a
    /// baseline run (small favors this run), or `None` when rows or folds
    /// do not align.
    pub fn baseline_p_values(&self, baseline: &ComparisonReport) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let j = baseline
                    .rows
                    .iter()
                    .position(|b| b.target == r.target && b.comparator == r.comparator)?;
                if baseline.fold_mse[j].len() != self.fold_mse[i].len() {
                    return None;
                }
                let pairs: (Vec<f64>, Vec<f64>) = self.fold_mse[i]
                    .iter()
                    .zip(&baseline.fold_mse[j])
                    .filter_map(|(a, b)| a.zip(*b))
                    .unzip();
                if pairs.0.len() < 2 {
                    return None;
                }
                metrics::paired_log_t_test(&pairs.0, &pairs.1).ok()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Site;
    use crate::gp::FitConfig;

    fn agg_dataset(n: usize, f: impl Fn(f64, f64) -> (f64, f64, f64)) -> Dataset {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let sites: Vec<Site> = (0..n)
            .map(|i| {
                Site::new(
                    format!("s{i:03}"),
                    30.0 + 12.0 * rng.random::<f64>(),
                    -115.0 + 30.0 * rng.random::<f64>(),
                )
                .unwrap()
            })
            .collect();
        let rows: Vec<(String, u32, SourceId, Option<f64>)> = sites
            .iter()
            .flat_map(|s| {
                let (fv, av, bv) = f(s.lat, s.lon);
                vec![
                    (s.id.clone(), 0, SourceId::Field, Some(fv)),
                    (s.id.clone(), 0, SourceId::SimA, Some(av)),
                    (s.id.clone(), 0, SourceId::SimB, Some(bv)),
                ]
            })
            .collect();
        Dataset::from_parts(sites, rows).unwrap()
    }

    fn quick_cfg() -> EvalConfig {
        EvalConfig {
            fit: FitConfig {
                n_starts: 2,
                max_iter: 50,
                seed: 5,
            },
            refit: RefitMode::WarmStart { max_iter: 25 },
            ..EvalConfig::default()
        }
    }

    #[test]
    fn loo_protocol_mechanics() {
        let ds = agg_dataset(8, |lat, lon| {
            let v = 100.0 + 2.0 * lat + 0.5 * lon;
            (v, v - 5.0, v + 3.0)
        });
        let folds = loo_cv(&ds, ModelKind::FieldGp, &quick_cfg()).unwrap();
        assert_eq!(folds.len(), 8);
        for f in &folds {
            assert!(f.failed.is_none(), "{:?}", f.failed);
            assert_eq!(f.n_obs, 1);
            assert_eq!(f.log_sq_errors.len(), 1);
        }
    }

    #[test]
    fn constant_predictor_rmse_oracle() {
        // The fold-metrics assembly applied to a closed-form mean predictor
        // reproduces held-out deviation from the training mean.
        let y = [3.0, 7.0, 1.0, 9.0, 4.0, 6.0];
        for i in 0..y.len() {
            let train_mean: f64 =
                y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum::<f64>()
                    / (y.len() - 1) as f64;
            let fr = fold_metrics(
                Site::new("s", 0.0, 0.0).unwrap(),
                &[Prediction {
                    mean: train_mean,
                    variance: 1.0,
                }],
                &[y[i]],
            );
            assert!((fr.rmse - (y[i] - train_mean).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn report_reference_rows_and_p_values() {
        let ds = agg_dataset(10, |lat, lon| {
            let truth = 150.0 + 3.0 * (lat - 35.0) + 0.8 * (lon + 100.0);
            (truth, truth - 20.0, truth + 12.0)
        });
        let models = vec![
            ModelKind::FieldGp,
            ModelKind::Surrogate(SourceId::SimA),
            ModelKind::SurrogateBias(SourceId::SimA),
        ];
        let suite = run_loo_suite(&ds, &models, &quick_cfg()).unwrap();
        let report = ComparisonReport::from_suite(&suite);
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].p.is_none());
        // Rows 2 and 3 target the field, so they reference earlier rows.
        assert!(report.rows[1].ref_row == Some(1));
        assert!(report.rows[2].p.is_some());
        let csv = report.to_csv_string();
        assert!(csv.starts_with("target,comparator,rmse,cov95,p,ref_row\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn suite_results_independent_of_thread_count() {
        let ds = agg_dataset(8, |lat, lon| {
            let v = 120.0 + 1.5 * lat - 0.3 * lon;
            (v, v - 4.0, v + 2.0)
        });
        let models = vec![ModelKind::FieldGp, ModelKind::Ivw];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_loo_suite(&ds, &models, &quick_cfg()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for (ea, eb) in a.iter().zip(&b) {
            for (fa, fb) in ea.folds.iter().zip(&eb.folds) {
                assert_eq!(fa.rmse.to_bits(), fb.rmse.to_bits());
                assert_eq!(fa.mse.to_bits(), fb.mse.to_bits());
            }
        }
    }

    #[test]
    fn failed_folds_recorded_and_run_continues() {
        // SimB has too few sites for the surrogate fit; those folds fail
        // while field folds succeed.
        let mut rows = Vec::new();
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sites: Vec<Site> = (0..8)
            .map(|i| {
                Site::new(
                    format!("s{i}"),
                    31.0 + 8.0 * rng.random::<f64>(),
                    -110.0 + 15.0 * rng.random::<f64>(),
                )
                .unwrap()
            })
            .collect();
        for (i, s) in sites.iter().enumerate() {
            rows.push((s.id.clone(), 0u32, SourceId::Field, Some(100.0 + i as f64)));
            if i < 3 {
                rows.push((s.id.clone(), 0u32, SourceId::SimB, Some(90.0 + i as f64)));
            }
        }
        let ds = Dataset::from_parts(sites, rows).unwrap();
        let suite = run_loo_suite(
            &ds,
            &[ModelKind::FieldGp, ModelKind::Surrogate(SourceId::SimB)],
            &quick_cfg(),
        )
        .unwrap();
        assert!(suite[0].folds.iter().all(|f| f.failed.is_none()));
        assert!(suite[1].folds.iter().all(|f| f.failed.is_some()));
    }

    #[test]
    fn daily_local_combination_rejected() {
        let ds = agg_dataset(6, |lat, _| (lat, lat, lat));
        let cfg = EvalConfig {
            engine: Engine::Local(crate::localgp::LocalConfig::default()),
            timescale: TimeScale::Daily,
            ..quick_cfg()
        };
        assert!(matches!(
            run_loo_suite(&ds, &[ModelKind::FieldGp], &cfg),
            Err(Error::Unsupported(_))
        ));
    }
}
