use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sunfuse::data::{Dataset, Site, SourceId};
use sunfuse::eval::{run_loo_suite, EvalConfig, ModelKind, RefitMode};
use sunfuse::gp::{fit_gp, fit_gp_warm, FitConfig};

fn calibration_dataset(n_sites: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = |lat: f64, lon: f64| 180.0 + 30.0 * (0.5 * lat).sin() + 20.0 * (0.4 * lon).cos();
    let bias = |lat: f64, lon: f64| 25.0 + 12.0 * (0.12 * lon).sin() + 8.0 * (0.1 * lat).cos();
    let mut sites = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n_sites {
        let lat = 28.0 + 14.0 * rng.random::<f64>();
        let lon = -115.0 + 30.0 * rng.random::<f64>();
        let site = Site::new(format!("s{i:04}"), lat, lon).unwrap();
        let m = sim(lat, lon);
        let f = m + bias(lat, lon) + 8.0 * rng.sample::<f64, _>(StandardNormal);
        rows.push((site.id.clone(), 0u32, SourceId::SimA, Some(m)));
        rows.push((site.id.clone(), 0u32, SourceId::Field, Some(f)));
        sites.push(site);
    }
    Dataset::from_parts(sites, rows).unwrap()
}

fn main() {
    let ds = calibration_dataset(200, 300);
    let rep = ds.aggregate_time(SourceId::Field).unwrap();
    let x = DMatrix::from_fn(rep.means.len(), 2, |i, c| {
        if c == 0 {
            rep.means[i].site.lat
        } else {
            rep.means[i].site.lon
        }
    });
    let y = DVector::from_fn(rep.means.len(), |i, _| rep.means[i].mean);
    let t0 = Instant::now();
    let full = fit_gp(&x, &y, &FitConfig { n_starts: 3, max_iter: 80, seed: 40 }).unwrap();
    println!("full field fit: {:?}", t0.elapsed());
    for cap in [25usize, 10, 6] {
        let t0 = Instant::now();
        for _ in 0..5 {
            let _ = fit_gp_warm(&x, &y, full.params(), cap).unwrap();
        }
        println!("warm refit (cap {cap}): {:?}/fit", t0.elapsed() / 5);
    }

    let models = [
        ModelKind::FieldGp,
        ModelKind::Surrogate(SourceId::SimA),
        ModelKind::SurrogateBias(SourceId::SimA),
    ];
    let cfg = EvalConfig {
        fit: FitConfig { n_starts: 3, max_iter: 80, seed: 40 },
        refit: RefitMode::WarmStart { max_iter: 8 },
        ..EvalConfig::default()
    };
    let t0 = Instant::now();
    let suite = run_loo_suite(&ds, &models, &cfg).unwrap();
    println!("one replicate (200 folds, warm cap 8): {:?}", t0.elapsed());
    let mean_rmse = |i: usize| -> f64 {
        let ok: Vec<_> = suite[i].folds.iter().filter(|f| f.failed.is_none()).collect();
        ok.iter().map(|f| f.rmse).sum::<f64>() / ok.len() as f64
    };
    println!(
        "rmse: field {:.2} uncorr {:.2} corr {:.2}",
        mean_rmse(0),
        mean_rmse(1),
        mean_rmse(2)
    );
}
