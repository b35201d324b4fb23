//! Comparator registry and the per-fold pipelines behind cross validation
//! and grid prediction.
//!
//! Comparator labels mirror the benchmark cascade: plain GPs per source,
//! simulator surrogates used as field predictors with and without bias
//! correction, their counterparts conditioning on actual simulator values,
//! and inverse-variance combinations of the lot. Each runs on aggregated
//! data (one value per site) or on the daily seasonal pipeline, with either
//! global or local GP engines.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::calibrate::{
    bias_corrected_predict, fit_bias, ivw_fuse, BiasModel, EngineCfg, PredictorHandle,
};
use crate::data::{Dataset, Site, SourceId};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, fit_gp_warm, FitConfig, GPModel, KernelParams, Prediction};
use crate::localgp::LocalConfig;
use crate::seasonal::{
    seasonal_bias_pipeline_mode, fit_coeff_field_mode, CoeffField, CoeffFitMode, SeasonalBiasModel,
    SeasonalConfig,
};

/// One comparator in the benchmark cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// GP on the field data predicting field values.
    FieldGp,
    /// GP on one simulator's data predicting that simulator.
    SimGp(SourceId),
    /// Simulator surrogate used directly as a field predictor (no bias term).
    Surrogate(SourceId),
    /// Surrogate plus estimated discrepancy.
    SurrogateBias(SourceId),
    /// Actual simulator values used directly as field predictions.
    TrueSim(SourceId),
    /// Actual simulator values plus estimated discrepancy.
    TrueSimBias(SourceId),
    /// Inverse-variance fusion of field GP and both bias-corrected surrogates.
    Ivw,
    /// Fusion of field GP and both true-value bias-corrected predictors.
    TrueSimIvw,
}

fn sim_name(s: SourceId) -> &'static str {
    match s {
        SourceId::SimA => "simA",
        SourceId::SimB => "simB",
        SourceId::Field => "field",
    }
}

impl ModelKind {
    pub fn label(&self) -> String {
        match self {
            ModelKind::FieldGp => "field-gp".into(),
            ModelKind::SimGp(s) => format!("sim-gp:{}", sim_name(*s)),
            ModelKind::Surrogate(s) => format!("surrogate:{}", sim_name(*s)),
            ModelKind::SurrogateBias(s) => format!("surrogate-bias:{}", sim_name(*s)),
            ModelKind::TrueSim(s) => format!("true-sim:{}", sim_name(*s)),
            ModelKind::TrueSimBias(s) => format!("true-sim-bias:{}", sim_name(*s)),
            ModelKind::Ivw => "ivw".into(),
            ModelKind::TrueSimIvw => "true-sim-ivw".into(),
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        let sim = |suffix: &str| -> Result<SourceId> {
            match suffix {
                "simA" => Ok(SourceId::SimA),
                "simB" => Ok(SourceId::SimB),
                other => Err(Error::UnknownComparator(format!(
                    "`{other}` is not a simulator source (simA or simB)"
                ))),
            }
        };
        match s {
            "field-gp" => Ok(ModelKind::FieldGp),
            "ivw" => Ok(ModelKind::Ivw),
            "true-sim-ivw" => Ok(ModelKind::TrueSimIvw),
            _ => {
                if let Some(rest) = s.strip_prefix("sim-gp:") {
                    Ok(ModelKind::SimGp(sim(rest)?))
                } else if let Some(rest) = s.strip_prefix("surrogate-bias:") {
                    Ok(ModelKind::SurrogateBias(sim(rest)?))
                } else if let Some(rest) = s.strip_prefix("surrogate:") {
                    Ok(ModelKind::Surrogate(sim(rest)?))
                } else if let Some(rest) = s.strip_prefix("true-sim-bias:") {
                    Ok(ModelKind::TrueSimBias(sim(rest)?))
                } else if let Some(rest) = s.strip_prefix("true-sim:") {
                    Ok(ModelKind::TrueSim(sim(rest)?))
                } else {
                    Err(Error::UnknownComparator(s.into()))
                }
            }
        }
    }

    /// The source whose held-out values this comparator is scored against.
    pub fn target(&self) -> SourceId {
        match self {
            ModelKind::SimGp(s) => *s,
            _ => SourceId::Field,
        }
    }

    pub fn needs_true_sim(&self) -> bool {
        matches!(
            self,
            ModelKind::TrueSim(_) | ModelKind::TrueSimBias(_) | ModelKind::TrueSimIvw
        )
    }

    /// The full cascade in report order.
    pub fn standard_cascade() -> Vec<ModelKind> {
        use ModelKind::*;
        use SourceId::{SimA, SimB};
        vec![
            FieldGp,
            SimGp(SimA),
            SimGp(SimB),
            Surrogate(SimB),
            Surrogate(SimA),
            SurrogateBias(SimA),
            SurrogateBias(SimB),
            Ivw,
            TrueSim(SimB),
            TrueSim(SimA),
            TrueSimBias(SimA),
            TrueSimBias(SimB),
            TrueSimIvw,
        ]
    }
}

/// Prediction engine: exact GPs on all training data or local approximate
/// GPs per query.
#[derive(Debug, Clone)]
pub enum Engine {
    Global,
    Local(LocalConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScale {
    Aggregated,
    Daily,
}

/// Hyperparameter treatment for per-fold retraining.
///
/// Re-optimization per fold is the default (`WarmStart` restarts the
/// optimizer from the full-data optimum); `FixedHyperparams` reuses the
/// full-data hyperparameters unchanged and is reported as a deviation.
#[derive(Debug, Clone)]
pub enum RefitMode {
    FullRestarts,
    WarmStart { max_iter: usize },
    FixedHyperparams,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub engine: Engine,
    pub timescale: TimeScale,
    pub fit: FitConfig,
    /// Minimum observations per site for the daily pipeline's OLS stage.
    pub min_obs: usize,
    pub refit: RefitMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            engine: Engine::Global,
            timescale: TimeScale::Aggregated,
            fit: FitConfig::default(),
            min_obs: crate::seasonal::DEFAULT_MIN_OBS,
            refit: RefitMode::WarmStart { max_iter: 40 },
        }
    }
}

fn slot(s: SourceId) -> usize {
    match s {
        SourceId::SimA => 0,
        SourceId::SimB => 1,
        SourceId::Field => unreachable!("field has no simulator slot"),
    }
}

fn slot_source(i: usize) -> SourceId {
    [SourceId::SimA, SourceId::SimB][i]
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Needs {
    field: bool,
    surr: [bool; 2],
    bias_surr: [bool; 2],
    bias_true: [bool; 2],
}

pub(crate) fn needs_for(models: &[ModelKind]) -> Needs {
    let mut n = Needs::default();
    for m in models {
        match m {
            ModelKind::FieldGp => n.field = true,
            ModelKind::SimGp(s) | ModelKind::Surrogate(s) => n.surr[slot(*s)] = true,
            ModelKind::SurrogateBias(s) => {
                n.surr[slot(*s)] = true;
                n.bias_surr[slot(*s)] = true;
            }
            ModelKind::TrueSim(_) => {}
            ModelKind::TrueSimBias(s) => n.bias_true[slot(*s)] = true,
            ModelKind::Ivw => {
                n.field = true;
                for j in 0..2 {
                    n.surr[j] = true;
                    n.bias_surr[j] = true;
                }
            }
            ModelKind::TrueSimIvw => {
                n.field = true;
                n.bias_true = [true, true];
            }
        }
    }
    n
}

/// Deterministic seed mixing for per-fold, per-component fits.
pub(crate) fn mix_seed(base: u64, fold: u64, component: u64) -> u64 {
    let mut z = base
        .wrapping_add(fold.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(component.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Aggregated pipeline
// ---------------------------------------------------------------------------

/// Aggregated per-site means for the three sources, aligned to site index.
pub(crate) struct AggData {
    pub sites: Vec<Site>,
    pub vals: [Vec<Option<f64>>; 3],
}

impl AggData {
    pub fn build(ds: &Dataset) -> Result<AggData> {
        let n = ds.n_sites();
        let mut vals: [Vec<Option<f64>>; 3] = [vec![None; n], vec![None; n], vec![None; n]];
        for (si, source) in SourceId::ALL.iter().enumerate() {
            let rep = ds.aggregate_time(*source)?;
            for sm in rep.means {
                let idx = ds.site_idx(&sm.site.id).expect("aggregate site known");
                vals[si][idx] = Some(sm.mean);
            }
        }
        Ok(AggData {
            sites: ds.sites().to_vec(),
            vals,
        })
    }

    fn value(&self, source: SourceId, site: usize) -> Option<f64> {
        let si = match source {
            SourceId::Field => 0,
            SourceId::SimA => 1,
            SourceId::SimB => 2,
        };
        self.vals[si][site]
    }

    /// Design matrix and responses over sites with a value for `source`,
    /// skipping `exclude`.
    fn training(&self, source: SourceId, exclude: Option<usize>) -> (DMatrix<f64>, DVector<f64>) {
        let rows: Vec<(usize, f64)> = (0..self.sites.len())
            .filter(|&i| Some(i) != exclude)
            .filter_map(|i| self.value(source, i).map(|v| (i, v)))
            .collect();
        let x = DMatrix::from_fn(rows.len(), 2, |r, c| {
            let s = &self.sites[rows[r].0];
            if c == 0 {
                s.lat
            } else {
                s.lon
            }
        });
        let y = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        (x, y)
    }
}

/// Trained aggregated components for one training subset.
#[derive(Default)]
pub(crate) struct AggComponents {
    field: Option<PredictorHandle>,
    surr: [Option<PredictorHandle>; 2],
    bias_surr: [Option<BiasModel>; 2],
    /// Discrepancy trained on field minus actual simulator values.
    bias_true: [Option<PredictorHandle>; 2],
    errors: BTreeMap<String, String>,
}

impl AggComponents {
    fn require<'a, T>(&'a self, slot_val: &'a Option<T>, name: &str) -> Result<&'a T> {
        slot_val.as_ref().ok_or_else(|| {
            Error::Unsupported(match self.errors.get(name) {
                Some(e) => format!("component {name} unavailable: {e}"),
                None => format!("component {name} was not built"),
            })
        })
    }
}

fn fit_predictor(
    x: DMatrix<f64>,
    y: DVector<f64>,
    cfg: &EvalConfig,
    warm: Option<&PredictorHandle>,
    seed: u64,
) -> Result<PredictorHandle> {
    match &cfg.engine {
        Engine::Local(lc) => Ok(PredictorHandle::Local {
            x,
            y,
            cfg: lc.clone(),
        }),
        Engine::Global => {
            let warm_params: Option<&KernelParams> = warm.and_then(|h| match h {
                PredictorHandle::Global(m) => Some(m.params()),
                PredictorHandle::Local { .. } => None,
            });
            let model = match (&cfg.refit, warm_params) {
                (RefitMode::FixedHyperparams, Some(p)) => {
                    GPModel::from_params(x, y, p.clone())?
                }
                (RefitMode::WarmStart { max_iter }, Some(p)) => {
                    fit_gp_warm(&x, &y, p, *max_iter)?
                }
                _ => fit_gp(&x, &y, &FitConfig { seed, ..cfg.fit.clone() })?,
            };
            Ok(PredictorHandle::Global(model))
        }
    }
}

pub(crate) fn build_agg_components(
    agg: &AggData,
    exclude: Option<usize>,
    needs: &Needs,
    cfg: &EvalConfig,
    warm: Option<&AggComponents>,
    fold_tag: u64,
) -> AggComponents {
    let mut out = AggComponents::default();
    let record = |errors: &mut BTreeMap<String, String>, name: &str, e: Error| {
        errors.insert(name.to_string(), e.to_string());
    };

    if needs.field {
        let t0 = std::time::Instant::now();
        let (x, y) = agg.training(SourceId::Field, exclude);
        match fit_predictor(x, y, cfg, warm.and_then(|w| w.field.as_ref()), mix_seed(cfg.fit.seed, fold_tag, 0)) {
            Ok(h) => out.field = Some(h),
            Err(e) => record(&mut out.errors, "field", e),
        }
        if fold_tag == 1 { eprintln!("field fit: {:?}", t0.elapsed()); }
    }
    for j in 0..2 {
        if needs.surr[j] {
            let (x, y) = agg.training(slot_source(j), exclude);
            match fit_predictor(
                x,
                y,
                cfg,
                warm.and_then(|w| w.surr[j].as_ref()),
                mix_seed(cfg.fit.seed, fold_tag, 1 + j as u64),
            ) {
                Ok(h) => out.surr[j] = Some(h),
                Err(e) => record(&mut out.errors, &format!("surrogate:{}", sim_name(slot_source(j))), e),
            }
        }
    }
    for j in 0..2 {
        if needs.bias_surr[j] {
            let name = format!("surrogate-bias:{}", sim_name(slot_source(j)));
            match build_bias_surr(agg, exclude, cfg, warm, fold_tag, j, &out) {
                Ok(b) => out.bias_surr[j] = Some(b),
                Err(e) => record(&mut out.errors, &name, e),
            }
        }
        if needs.bias_true[j] {
            let name = format!("true-sim-bias:{}", sim_name(slot_source(j)));
            match build_bias_true(agg, exclude, cfg, warm, fold_tag, j) {
                Ok(h) => out.bias_true[j] = Some(h),
                Err(e) => record(&mut out.errors, &name, e),
            }
        }
    }
    out
}

fn disc_engine_cfg(cfg: &EvalConfig, seed: u64) -> EngineCfg {
    match &cfg.engine {
        Engine::Global => EngineCfg::Global(FitConfig { seed, ..cfg.fit.clone() }),
        Engine::Local(lc) => EngineCfg::Local(lc.clone()),
    }
}

fn build_bias_surr(
    agg: &AggData,
    exclude: Option<usize>,
    cfg: &EvalConfig,
    warm: Option<&AggComponents>,
    fold_tag: u64,
    j: usize,
    partial: &AggComponents,
) -> Result<BiasModel> {
    let surrogate = partial
        .surr[j]
        .as_ref()
        .ok_or_else(|| Error::Unsupported("surrogate unavailable for bias fit".into()))?
        .clone();
    // Field training sites for the residuals.
    let (xf, yf) = agg.training(SourceId::Field, exclude);
    let preds = surrogate.predict(&xf, false)?;
    let seed = mix_seed(cfg.fit.seed, fold_tag, 3 + j as u64);
    match (&cfg.refit, &cfg.engine, warm.and_then(|w| w.bias_surr[j].as_ref())) {
        // Warm or fixed reuse of the full-data discrepancy hyperparameters.
        (RefitMode::WarmStart { max_iter }, Engine::Global, Some(full)) => {
            if let PredictorHandle::Global(m) = &full.discrepancy {
                let resid = DVector::from_fn(yf.len(), |i, _| yf[i] - preds[i].mean);
                let disc = fit_gp_warm(&xf, &resid, m.params(), *max_iter)?;
                let noise_var = disc.params().noise_variance();
                return Ok(BiasModel {
                    surrogate,
                    discrepancy: PredictorHandle::Global(disc),
                    noise_var,
                });
            }
            fit_bias(surrogate, &xf, &yf, &preds, &disc_engine_cfg(cfg, seed))
        }
        (RefitMode::FixedHyperparams, Engine::Global, Some(full)) => {
            if let PredictorHandle::Global(m) = &full.discrepancy {
                let resid = DVector::from_fn(yf.len(), |i, _| yf[i] - preds[i].mean);
                let disc = GPModel::from_params(xf.clone(), resid, m.params().clone())?;
                let noise_var = disc.params().noise_variance();
                return Ok(BiasModel {
                    surrogate,
                    discrepancy: PredictorHandle::Global(disc),
                    noise_var,
                });
            }
            fit_bias(surrogate, &xf, &yf, &preds, &disc_engine_cfg(cfg, seed))
        }
        _ => fit_bias(surrogate, &xf, &yf, &preds, &disc_engine_cfg(cfg, seed)),
    }
}

fn build_bias_true(
    agg: &AggData,
    exclude: Option<usize>,
    cfg: &EvalConfig,
    warm: Option<&AggComponents>,
    fold_tag: u64,
    j: usize,
) -> Result<PredictorHandle> {
    // Residuals at sites with both field and simulator values.
    let rows: Vec<(usize, f64)> = (0..agg.sites.len())
        .filter(|&i| Some(i) != exclude)
        .filter_map(|i| {
            match (agg.value(SourceId::Field, i), agg.value(slot_source(j), i)) {
                (Some(f), Some(s)) => Some((i, f - s)),
                _ => None,
            }
        })
        .collect();
    if rows.len() < 5 {
        return Err(Error::InsufficientData {
            required: 5,
            actual: rows.len(),
            context: "true-simulator discrepancy fit".into(),
        });
    }
    let x = DMatrix::from_fn(rows.len(), 2, |r, c| {
        let s = &agg.sites[rows[r].0];
        if c == 0 {
            s.lat
        } else {
            s.lon
        }
    });
    let y = DVector::from_fn(rows.len(), |r, _| rows[r].1);
    fit_predictor(
        x,
        y,
        cfg,
        warm.and_then(|w| w.bias_true[j].as_ref()),
        mix_seed(cfg.fit.seed, fold_tag, 5 + j as u64),
    )
}

/// Predict one aggregated comparator at query points. `sim_vals[j]`, when
/// required by a true-simulator comparator, supplies the actual simulator
/// values per row.
pub(crate) fn predict_agg(
    model: ModelKind,
    comps: &AggComponents,
    pts: &DMatrix<f64>,
    sim_vals: [Option<&[f64]>; 2],
) -> Result<Vec<Prediction>> {
    let true_vals = |j: usize| -> Result<&[f64]> {
        sim_vals[j].ok_or_else(|| Error::TrueSimUnavailable(slot_source(j).to_string()))
    };
    match model {
        ModelKind::FieldGp => comps.require(&comps.field, "field")?.predict(pts, true),
        ModelKind::SimGp(s) | ModelKind::Surrogate(s) => {
            let j = slot(s);
            comps
                .require(&comps.surr[j], &format!("surrogate:{}", sim_name(s)))?
                .predict(pts, true)
        }
        ModelKind::SurrogateBias(s) => {
            let j = slot(s);
            let bm = comps.require(&comps.bias_surr[j], &format!("surrogate-bias:{}", sim_name(s)))?;
            bias_corrected_predict(bm, pts, None)
        }
        ModelKind::TrueSim(s) => {
            let vals = true_vals(slot(s))?;
            if vals.len() != pts.nrows() {
                return Err(Error::Coverage("true simulator values incomplete".into()));
            }
            Ok(vals
                .iter()
                .map(|&v| Prediction {
                    mean: v,
                    variance: 0.0,
                })
                .collect())
        }
        ModelKind::TrueSimBias(s) => {
            let j = slot(s);
            let vals = true_vals(j)?;
            let disc = comps.require(&comps.bias_true[j], &format!("true-sim-bias:{}", sim_name(s)))?;
            let dp = disc.predict(pts, true)?;
            if vals.len() != pts.nrows() {
                return Err(Error::Coverage("true simulator values incomplete".into()));
            }
            Ok(dp
                .iter()
                .zip(vals)
                .map(|(d, &v)| Prediction {
                    mean: v + d.mean,
                    variance: d.variance,
                })
                .collect())
        }
        ModelKind::Ivw => {
            let field = predict_agg(ModelKind::FieldGp, comps, pts, sim_vals)?;
            let a = predict_agg(ModelKind::SurrogateBias(SourceId::SimA), comps, pts, sim_vals)?;
            let b = predict_agg(ModelKind::SurrogateBias(SourceId::SimB), comps, pts, sim_vals)?;
            fuse3(&field, &a, &b)
        }
        ModelKind::TrueSimIvw => {
            let field = predict_agg(ModelKind::FieldGp, comps, pts, sim_vals)?;
            let a = predict_agg(ModelKind::TrueSimBias(SourceId::SimA), comps, pts, sim_vals)?;
            let b = predict_agg(ModelKind::TrueSimBias(SourceId::SimB), comps, pts, sim_vals)?;
            fuse3(&field, &a, &b)
        }
    }
}

fn fuse3(a: &[Prediction], b: &[Prediction], c: &[Prediction]) -> Result<Vec<Prediction>> {
    (0..a.len()).map(|i| ivw_fuse(&[a[i], b[i], c[i]])).collect()
}

// ---------------------------------------------------------------------------
// Daily (seasonal) pipeline
// ---------------------------------------------------------------------------

#[derive(Default)]
pub(crate) struct DailyComponents {
    field_cf: Option<CoeffField>,
    sim_cf: [Option<CoeffField>; 2],
    disc_surr: [Option<CoeffField>; 2],
    disc_true: [Option<CoeffField>; 2],
    errors: BTreeMap<String, String>,
}

impl DailyComponents {
    fn require<'a>(&'a self, v: &'a Option<CoeffField>, name: &str) -> Result<&'a CoeffField> {
        v.as_ref().ok_or_else(|| {
            Error::Unsupported(match self.errors.get(name) {
                Some(e) => format!("component {name} unavailable: {e}"),
                None => format!("component {name} was not built"),
            })
        })
    }
}

fn coeff_mode(
    cfg: &EvalConfig,
    warm: Option<&CoeffField>,
) -> CoeffFitMode {
    match (&cfg.refit, warm) {
        (RefitMode::WarmStart { max_iter }, Some(cf)) => CoeffFitMode::Warm {
            init: [
                cf.fields()[0].params().clone(),
                cf.fields()[1].params().clone(),
                cf.fields()[2].params().clone(),
            ],
            max_iter: *max_iter,
        },
        (RefitMode::FixedHyperparams, Some(cf)) => CoeffFitMode::Fixed([
            cf.fields()[0].params().clone(),
            cf.fields()[1].params().clone(),
            cf.fields()[2].params().clone(),
        ]),
        _ => CoeffFitMode::Fresh,
    }
}

fn seasonal_cfg(cfg: &EvalConfig, seed: u64) -> SeasonalConfig {
    SeasonalConfig {
        min_obs: cfg.min_obs,
        basis: crate::seasonal::HarmonicBasis::Full,
        fit: FitConfig { seed, ..cfg.fit.clone() },
    }
}

/// Dataset of field-minus-simulator residuals over cells where both are
/// observed.
fn true_sim_residuals(ds: &Dataset, sim: SourceId) -> Result<Dataset> {
    let mut rows = Vec::new();
    for (i, site) in ds.sites().iter().enumerate() {
        for (day, f) in ds.site_series(i, SourceId::Field) {
            if let Some(s) = ds.value(i, day, sim) {
                rows.push((site.id.clone(), day, SourceId::Field, Some(f - s)));
            }
        }
    }
    Dataset::from_parts(ds.sites().to_vec(), rows)
}

pub(crate) fn build_daily_components(
    ds: &Dataset,
    needs: &Needs,
    cfg: &EvalConfig,
    warm: Option<&DailyComponents>,
    fold_tag: u64,
) -> DailyComponents {
    let mut out = DailyComponents::default();

    if needs.field {
        let scfg = seasonal_cfg(cfg, mix_seed(cfg.fit.seed, fold_tag, 10));
        let mode = coeff_mode(cfg, warm.and_then(|w| w.field_cf.as_ref()));
        match fit_coeff_field_mode(ds, SourceId::Field, &scfg, &mode) {
            Ok(cf) => out.field_cf = Some(cf),
            Err(e) => {
                out.errors.insert("field".into(), e.to_string());
            }
        }
    }
    for j in 0..2 {
        let source = slot_source(j);
        if needs.bias_surr[j] {
            let scfg = seasonal_cfg(cfg, mix_seed(cfg.fit.seed, fold_tag, 11 + j as u64));
            let surr_mode = coeff_mode(cfg, warm.and_then(|w| w.sim_cf[j].as_ref()));
            let disc_mode = coeff_mode(cfg, warm.and_then(|w| w.disc_surr[j].as_ref()));
            match seasonal_bias_pipeline_mode(ds, ds, source, &scfg, &surr_mode, &disc_mode) {
                Ok(SeasonalBiasModel {
                    surrogate,
                    discrepancy,
                }) => {
                    out.sim_cf[j] = Some(surrogate);
                    out.disc_surr[j] = Some(discrepancy);
                }
                Err(e) => {
                    out.errors
                        .insert(format!("surrogate-bias:{}", sim_name(source)), e.to_string());
                }
            }
        } else if needs.surr[j] {
            let scfg = seasonal_cfg(cfg, mix_seed(cfg.fit.seed, fold_tag, 11 + j as u64));
            let mode = coeff_mode(cfg, warm.and_then(|w| w.sim_cf[j].as_ref()));
            match fit_coeff_field_mode(ds, source, &scfg, &mode) {
                Ok(cf) => out.sim_cf[j] = Some(cf),
                Err(e) => {
                    out.errors
                        .insert(format!("surrogate:{}", sim_name(source)), e.to_string());
                }
            }
        }
        if needs.bias_true[j] {
            let name = format!("true-sim-bias:{}", sim_name(source));
            let scfg = seasonal_cfg(cfg, mix_seed(cfg.fit.seed, fold_tag, 15 + j as u64));
            let mode = coeff_mode(cfg, warm.and_then(|w| w.disc_true[j].as_ref()));
            match true_sim_residuals(ds, source)
                .and_then(|resid| fit_coeff_field_mode(&resid, SourceId::Field, &scfg, &mode))
            {
                Ok(cf) => out.disc_true[j] = Some(cf),
                Err(e) => {
                    out.errors.insert(name, e.to_string());
                }
            }
        }
    }
    out
}

/// Daily prediction for one comparator at query points on one day.
/// Day-level noise (the pooled OLS residual variance of the model's own
/// residual stage) is added so intervals target observations.
pub(crate) fn predict_daily(
    model: ModelKind,
    comps: &DailyComponents,
    pts: &DMatrix<f64>,
    day: u32,
    sim_vals: [Option<&[f64]>; 2],
) -> Result<Vec<Prediction>> {
    let true_vals = |j: usize| -> Result<&[f64]> {
        sim_vals[j].ok_or_else(|| Error::TrueSimUnavailable(slot_source(j).to_string()))
    };
    match model {
        ModelKind::FieldGp => {
            let cf = comps.require(&comps.field_cf, "field")?;
            let cps = cf.coeff_predict(pts)?;
            Ok(cps
                .iter()
                .map(|cp| {
                    let mut p = cp.at_day(day);
                    p.variance += cf.pooled_resid_var;
                    p
                })
                .collect())
        }
        ModelKind::SimGp(s) | ModelKind::Surrogate(s) => {
            let j = slot(s);
            let cf = comps.require(&comps.sim_cf[j], &format!("surrogate:{}", sim_name(s)))?;
            let cps = cf.coeff_predict(pts)?;
            Ok(cps
                .iter()
                .map(|cp| {
                    let mut p = cp.at_day(day);
                    p.variance += cf.pooled_resid_var;
                    p
                })
                .collect())
        }
        ModelKind::SurrogateBias(s) => {
            let j = slot(s);
            let surr = comps.require(&comps.sim_cf[j], &format!("surrogate:{}", sim_name(s)))?;
            let disc =
                comps.require(&comps.disc_surr[j], &format!("surrogate-bias:{}", sim_name(s)))?;
            let sp = surr.coeff_predict(pts)?;
            let dp = disc.coeff_predict(pts)?;
            Ok(sp
                .iter()
                .zip(&dp)
                .map(|(a, b)| {
                    let pa = a.at_day(day);
                    let pb = b.at_day(day);
                    Prediction {
                        mean: pa.mean + pb.mean,
                        variance: pa.variance + pb.variance + disc.pooled_resid_var,
                    }
                })
                .collect())
        }
        ModelKind::TrueSim(s) => {
            let vals = true_vals(slot(s))?;
            Ok(vals
                .iter()
                .map(|&v| Prediction {
                    mean: v,
                    variance: 0.0,
                })
                .collect())
        }
        ModelKind::TrueSimBias(s) => {
            let j = slot(s);
            let vals = true_vals(j)?;
            let disc =
                comps.require(&comps.disc_true[j], &format!("true-sim-bias:{}", sim_name(s)))?;
            let dp = disc.coeff_predict(pts)?;
            Ok(dp
                .iter()
                .zip(vals)
                .map(|(d, &v)| {
                    let b = d.at_day(day);
                    Prediction {
                        mean: v + b.mean,
                        variance: b.variance + disc.pooled_resid_var,
                    }
                })
                .collect())
        }
        ModelKind::Ivw => {
            let field = predict_daily(ModelKind::FieldGp, comps, pts, day, sim_vals)?;
            let a = predict_daily(ModelKind::SurrogateBias(SourceId::SimA), comps, pts, day, sim_vals)?;
            let b = predict_daily(ModelKind::SurrogateBias(SourceId::SimB), comps, pts, day, sim_vals)?;
            fuse3(&field, &a, &b)
        }
        ModelKind::TrueSimIvw => {
            let field = predict_daily(ModelKind::FieldGp, comps, pts, day, sim_vals)?;
            let a = predict_daily(ModelKind::TrueSimBias(SourceId::SimA), comps, pts, day, sim_vals)?;
            let b = predict_daily(ModelKind::TrueSimBias(SourceId::SimB), comps, pts, day, sim_vals)?;
            fuse3(&field, &a, &b)
        }
    }
}

// ---------------------------------------------------------------------------
// Full-data trained comparator (grid prediction)
// ---------------------------------------------------------------------------

/// A comparator trained on the full dataset, for prediction at arbitrary
/// query points (e.g. a dense grid).
pub struct TrainedComparator {
    pub model: ModelKind,
    pub timescale: TimeScale,
    inner: TrainedInner,
}

enum TrainedInner {
    Agg(Box<AggComponents>),
    Daily(Box<DailyComponents>),
}

/// Train `model` on all sites. Comparators conditioning on true simulator
/// values cannot be evaluated away from stations and are rejected.
pub fn fit_comparator(ds: &Dataset, model: ModelKind, cfg: &EvalConfig) -> Result<TrainedComparator> {
    if model.needs_true_sim() {
        return Err(Error::TrueSimUnavailable(model.label()));
    }
    if matches!(cfg.timescale, TimeScale::Daily) && matches!(cfg.engine, Engine::Local(_)) {
        return Err(Error::Unsupported(
            "local engine applies to aggregated data only".into(),
        ));
    }
    let needs = needs_for(std::slice::from_ref(&model));
    let inner = match cfg.timescale {
        TimeScale::Aggregated => {
            let agg = AggData::build(ds)?;
            let comps = build_agg_components(&agg, None, &needs, cfg, None, 0);
            if let Some((name, err)) = comps.errors.iter().next() {
                return Err(Error::FitFailure(format!("{name}: {err}")));
            }
            TrainedInner::Agg(Box::new(comps))
        }
        TimeScale::Daily => {
            let comps = build_daily_components(ds, &needs, cfg, None, 0);
            if let Some((name, err)) = comps.errors.iter().next() {
                return Err(Error::FitFailure(format!("{name}: {err}")));
            }
            TrainedInner::Daily(Box::new(comps))
        }
    };
    Ok(TrainedComparator {
        model,
        timescale: cfg.timescale,
        inner,
    })
}

impl TrainedComparator {
    /// Predict at `pts`; `day` is required for daily comparators and must
    /// be absent for aggregated ones.
    pub fn predict(&self, pts: &DMatrix<f64>, day: Option<u32>) -> Result<Vec<Prediction>> {
        match (&self.inner, day) {
            (TrainedInner::Agg(c), None) => predict_agg(self.model, c, pts, [None, None]),
            (TrainedInner::Agg(_), Some(_)) => Err(Error::Unsupported(
                "aggregated comparator takes no day argument".into(),
            )),
            (TrainedInner::Daily(c), Some(d)) => predict_daily(self.model, c, pts, d, [None, None]),
            (TrainedInner::Daily(_), None) => Err(Error::Unsupported(
                "daily comparator requires a day argument".into(),
            )),
        }
    }
}
