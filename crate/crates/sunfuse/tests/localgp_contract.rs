//! Local prediction contracts at scale: degeneracy to the exact GP, the
//! per-query memory bound, and near-linear scaling in the query count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sunfuse::gp::{fit_gp, FitConfig};
use sunfuse::localgp::{local_predict, LocalConfig, SelectionMethod};

fn surface(lat: f64, lon: f64) -> f64 {
    180.0 + 30.0 * (0.25 * lat).sin() + 15.0 * (0.1 * lon).cos()
}

fn stations(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, c| {
        if c == 0 {
            24.0 + 26.0 * rng.random::<f64>()
        } else {
            -125.0 + 59.0 * rng.random::<f64>()
        }
    });
    let y = DVector::from_fn(n, |i, _| {
        surface(x[(i, 0)], x[(i, 1)]) + 2.0 * (rng.random::<f64>() - 0.5)
    });
    (x, y)
}

#[test]
fn full_subdesign_degenerates_to_exact_gp() {
    for &n in &[20usize, 60, 100] {
        let (x, y) = stations(n, n as u64);
        let fit = FitConfig {
            n_starts: 2,
            max_iter: 60,
            seed: 3,
        };
        let cfg = LocalConfig {
            n,
            method: SelectionMethod::NearestNeighbor,
            n_start: 6,
            fit: fit.clone(),
        };
        let q = DMatrix::from_row_slice(3, 2, &[30.0, -100.0, 40.0, -90.0, 35.5, -110.0]);
        let local = local_predict(&x, &y, &q, &cfg, false).unwrap();
        let exact = fit_gp(&x, &y, &fit).unwrap().predict(&q, false).unwrap();
        for (l, e) in local.iter().zip(&exact) {
            assert!((l.mean - e.mean).abs() < 1e-6, "n={n}: {} vs {}", l.mean, e.mean);
            assert!((l.variance - e.variance).abs() < 1e-6);
        }
    }
}

#[test]
fn thousand_queries_at_station_scale() {
    // 1535 training sites, 1000 queries; every fold touches only O(n^2)
    // memory, never an N x N matrix.
    let (x, y) = stations(1535, 9);
    let cfg = LocalConfig {
        n: 20,
        method: SelectionMethod::NearestNeighbor,
        n_start: 6,
        fit: FitConfig {
            n_starts: 1,
            max_iter: 30,
            seed: 5,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = DMatrix::from_fn(1000, 2, |_, c| {
        if c == 0 {
            26.0 + 22.0 * rng.random::<f64>()
        } else {
            -120.0 + 50.0 * rng.random::<f64>()
        }
    });
    let preds = local_predict(&x, &y, &q, &cfg, true).unwrap();
    assert_eq!(preds.len(), 1000);
    assert!(preds.iter().all(|p| p.mean.is_finite() && p.variance >= 0.0));
}

#[test]
fn per_query_cost_roughly_constant_in_query_count() {
    let (x, y) = stations(600, 11);
    let cfg = LocalConfig {
        n: 15,
        method: SelectionMethod::NearestNeighbor,
        n_start: 6,
        fit: FitConfig {
            n_starts: 1,
            max_iter: 25,
            seed: 5,
        },
    };
    let queries = |m: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        DMatrix::from_fn(m, 2, |_, c| {
            if c == 0 {
                26.0 + 22.0 * rng.random::<f64>()
            } else {
                -120.0 + 50.0 * rng.random::<f64>()
            }
        })
    };
    // Warm up allocator and thread pool.
    let _ = local_predict(&x, &y, &queries(50), &cfg, false).unwrap();

    let small = queries(100);
    let t0 = Instant::now();
    let _ = local_predict(&x, &y, &small, &cfg, false).unwrap();
    let per_small = t0.elapsed().as_secs_f64() / 100.0;

    let big = queries(400);
    let t0 = Instant::now();
    let _ = local_predict(&x, &y, &big, &cfg, false).unwrap();
    let per_big = t0.elapsed().as_secs_f64() / 400.0;

    assert!(
        per_big < 3.0 * per_small,
        "per-query cost grew from {per_small:.6}s to {per_big:.6}s"
    );
}
