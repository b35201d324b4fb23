//! Hyperparameter recovery on data sampled from a known generator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sunfuse::gp::{fit_gp, FitConfig, KernelParams};

fn sample_gp(x: &DMatrix<f64>, params: &KernelParams, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = x.nrows();
    let mut k = DMatrix::from_fn(n, n, |i, j| {
        let xi: Vec<f64> = (0..x.ncols()).map(|c| x[(i, c)]).collect();
        let xj: Vec<f64> = (0..x.ncols()).map(|c| x[(j, c)]).collect();
        sunfuse::gp::kernel(&xi, &xj, params).unwrap()
    });
    for i in 0..n {
        k[(i, i)] += params.noise_variance() + 1e-10;
    }
    let chol = nalgebra::Cholesky::new(k).expect("generator covariance PD");
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    chol.l() * z
}

#[test]
fn lengthscale_recovered_from_known_generator() {
    let truth = KernelParams::new(vec![0.5, 0.5], 1.0, 0.01).unwrap();
    let n = 200;
    let mut logs: Vec<[f64; 2]> = Vec::new();
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let y = sample_gp(&x, &truth, &mut rng);
        let cfg = FitConfig {
            n_starts: 3,
            max_iter: 80,
            seed: 77 + rep,
        };
        let model = fit_gp(&x, &y, &cfg).unwrap();
        let ls = &model.params().lengthscales;
        logs.push([ls[0].ln(), ls[1].ln()]);
    }
    for k in 0..2 {
        let mut col: Vec<f64> = logs.iter().map(|l| l[k]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (col[9] + col[10]) / 2.0;
        let want = 0.5f64.ln();
        assert!(
            (median - want).abs() <= 0.5,
            "dimension {k}: median log-lengthscale {median:.3} vs truth {want:.3}"
        );
    }
}
