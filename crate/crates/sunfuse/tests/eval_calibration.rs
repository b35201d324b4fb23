//! LOO-CV coverage under a correctly specified model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sunfuse::data::{Dataset, Site, SourceId};
use sunfuse::eval::{loo_cv, EvalConfig, ModelKind, RefitMode};
use sunfuse::gp::{FitConfig, KernelParams};

#[test]
fn field_gp_coverage_under_true_model() {
    // Sites from a box, responses drawn from a GP whose family matches the
    // fitted model; nominal 95% intervals should cover at close to 95%.
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = DMatrix::from_fn(n, 2, |_, c| {
        if c == 0 {
            28.0 + 14.0 * rng.random::<f64>()
        } else {
            -115.0 + 30.0 * rng.random::<f64>()
        }
    });
    let truth = KernelParams::new(vec![9.0, 36.0], 400.0, 0.05).unwrap();
    let mut k = DMatrix::from_fn(n, n, |i, j| {
        let xi = [x[(i, 0)], x[(i, 1)]];
        let xj = [x[(j, 0)], x[(j, 1)]];
        sunfuse::gp::kernel(&xi, &xj, &truth).unwrap()
    });
    for i in 0..n {
        k[(i, i)] += truth.noise_variance();
    }
    let chol = nalgebra::Cholesky::new(k).unwrap();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = chol.l() * z * 1.0 + DVector::from_element(n, 200.0);

    let sites: Vec<Site> = (0..n)
        .map(|i| Site::new(format!("s{i:03}"), x[(i, 0)], x[(i, 1)]).unwrap())
        .collect();
    let rows: Vec<(String, u32, SourceId, Option<f64>)> = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), 0u32, SourceId::Field, Some(y[i])))
        .collect();
    let ds = Dataset::from_parts(sites, rows).unwrap();

    let cfg = EvalConfig {
        fit: FitConfig {
            n_starts: 3,
            max_iter: 80,
            seed: 7,
        },
        refit: RefitMode::WarmStart { max_iter: 30 },
        ..EvalConfig::default()
    };
    let folds = loo_cv(&ds, ModelKind::FieldGp, &cfg).unwrap();
    let ok: Vec<_> = folds.iter().filter(|f| f.failed.is_none()).collect();
    assert_eq!(ok.len(), n);
    let coverage = ok.iter().map(|f| f.covered_frac).sum::<f64>() / ok.len() as f64;
    assert!(
        (0.90..=0.99).contains(&coverage),
        "average coverage {coverage}"
    );
}
