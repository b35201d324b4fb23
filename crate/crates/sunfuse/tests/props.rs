//! Property tests for the pure per-point operations.

use proptest::prelude::*;
use sunfuse::calibrate::ivw_fuse;
use sunfuse::design::{snap_to_grid, GridSpec};
use sunfuse::eval::rmse;
use sunfuse::gp::{kernel, KernelParams, Prediction};

proptest! {
    #[test]
    fn snap_is_idempotent(lat in -90.0f64..90.0, lon in -180.0f64..180.0) {
        let g = GridSpec::service();
        let once = snap_to_grid((lat, lon), &g);
        let twice = snap_to_grid(once, &g);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn fused_prediction_is_a_contraction(
        comps in prop::collection::vec(((-1e3f64..1e3), (1e-6f64..1e3)), 1..6)
    ) {
        let preds: Vec<Prediction> = comps
            .iter()
            .map(|&(mean, variance)| Prediction { mean, variance })
            .collect();
        let fused = ivw_fuse(&preds).unwrap();
        let vmin = preds.iter().map(|p| p.variance).fold(f64::INFINITY, f64::min);
        let (lo, hi) = preds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.mean), b.max(p.mean))
        });
        prop_assert!(fused.variance <= vmin + 1e-12);
        prop_assert!(fused.mean >= lo - 1e-9 && fused.mean <= hi + 1e-9);
        if preds.len() >= 2 {
            prop_assert!(fused.variance < vmin);
        }
    }

    #[test]
    fn fused_mean_invariant_to_variance_scaling(
        comps in prop::collection::vec(((-1e3f64..1e3), (1e-3f64..1e3)), 2..5),
        scale in 1e-2f64..1e2,
    ) {
        let preds: Vec<Prediction> = comps
            .iter()
            .map(|&(mean, variance)| Prediction { mean, variance })
            .collect();
        let scaled: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction { mean: p.mean, variance: p.variance * scale })
            .collect();
        let a = ivw_fuse(&preds).unwrap();
        let b = ivw_fuse(&scaled).unwrap();
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        prop_assert!((b.variance - a.variance * scale).abs() <= 1e-9 * b.variance.max(1e-12));
    }

    #[test]
    fn kernel_is_stationary(
        x0 in -50.0f64..50.0, x1 in -50.0f64..50.0,
        y0 in -50.0f64..50.0, y1 in -50.0f64..50.0,
        shift in -100.0f64..100.0,
        ls in 0.1f64..50.0,
    ) {
        let p = KernelParams::new(vec![ls, ls * 2.0], 1.5, 0.0).unwrap();
        let a = kernel(&[x0, x1], &[y0, y1], &p).unwrap();
        let b = kernel(&[x0 + shift, x1 + shift], &[y0 + shift, y1 + shift], &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn rmse_invariant_to_pairing_order(
        pairs in prop::collection::vec(((-1e3f64..1e3), (-1e3f64..1e3)), 1..20),
        rot in 0usize..20,
    ) {
        let (pred, obs): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let base = rmse(&pred, &obs).unwrap();
        let k = rot % pred.len();
        let pred_rot: Vec<f64> = pred.iter().cycle().skip(k).take(pred.len()).copied().collect();
        let obs_rot: Vec<f64> = obs.iter().cycle().skip(k).take(obs.len()).copied().collect();
        let rotated = rmse(&pred_rot, &obs_rot).unwrap();
        prop_assert!((base - rotated).abs() <= 1e-9 * base.max(1e-12));
    }
}
