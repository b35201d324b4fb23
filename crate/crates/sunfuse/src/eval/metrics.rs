//! Accuracy and calibration metrics: RMSE, nominal-95% coverage, a paired
//! one-tail t-test on log squared errors, and a Gaussian proper score.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::gp::Prediction;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;
/// Floor applied to squared errors before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Root-mean-squared error over paired predictions and observations.
pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("rmse of empty vectors".into()));
    }
    let ss: f64 = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Fraction of observations inside the nominal 95% Gaussian interval
/// `mean +/- 1.959964 sd`.
pub fn coverage95(pred: &[Prediction], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("coverage of empty vectors".into()));
    }
    let covered = pred
        .iter()
        .zip(obs)
        .filter(|(p, o)| {
            let half = Z95 * p.variance.max(0.0).sqrt();
            (*o - p.mean).abs() <= half
        })
        .count();
    Ok(covered as f64 / pred.len() as f64)
}

/// One-tailed paired t-test on differences of log squared errors.
///
/// Small p supports "A has lower error than B". Zero squared errors are
/// floored at [`LOG_FLOOR`] before the log; a zero-variance difference
/// vector degenerates to p = 1 when the mean difference is nonnegative and
/// 0 otherwise.
pub fn paired_log_t_test(errors_a: &[f64], errors_b: &[f64]) -> Result<f64> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Shape(format!(
            "{} vs {} paired errors",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
            context: "paired t-test".into(),
        });
    }
    let d: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln())
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean >= 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidParam(format!("t distribution: {e}")))?;
    Ok(dist.cdf(t))
}

/// Log-density-style score of a Gaussian prediction against observations:
/// `-log det(cov) - (obs - mean)^T cov^-1 (obs - mean)`. Higher is better.
pub fn proper_score(mean: &DVector<f64>, cov: &DMatrix<f64>, obs: &DVector<f64>) -> Result<f64> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n || obs.len() != n {
        return Err(Error::Shape(format!(
            "mean {}, cov {}x{}, obs {}",
            n,
            cov.nrows(),
            cov.ncols(),
            obs.len()
        )));
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Conditioning("score covariance is not positive definite".into()))?;
    let log_det: f64 = {
        let l = chol.l_dirty();
        (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    };
    let r = obs - mean;
    let sol = chol.solve(&r);
    Ok(-log_det - r.dot(&sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rmse_zero_when_exact() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn rmse_hand_case() {
        // errors 3 and 4: sqrt((9 + 16) / 2) = sqrt(12.5)
        let v = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(v, 12.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(v, 3.5355, epsilon = 1e-4);
    }

    #[test]
    fn rmse_single_observation_is_absolute_error() {
        assert_relative_eq!(rmse(&[5.0], &[2.0]).unwrap(), 3.0);
    }

    #[test]
    fn rmse_permutation_and_scaling() {
        let pred = [1.0, 4.0, -2.0, 0.5];
        let obs = [0.0, 5.0, -1.0, 2.5];
        let base = rmse(&pred, &obs).unwrap();
        let perm_p = [4.0, 0.5, 1.0, -2.0];
        let perm_o = [5.0, 2.5, 0.0, -1.0];
        assert_relative_eq!(rmse(&perm_p, &perm_o).unwrap(), base, epsilon = 1e-15);
        let scaled_p: Vec<f64> = pred.iter().map(|v| v * 3.0).collect();
        let scaled_o: Vec<f64> = obs.iter().map(|v| v * 3.0).collect();
        assert_relative_eq!(rmse(&scaled_p, &scaled_o).unwrap(), 3.0 * base, epsilon = 1e-12);
    }

    #[test]
    fn rmse_shape_error() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    fn pred(mean: f64, variance: f64) -> Prediction {
        Prediction { mean, variance }
    }

    #[test]
    fn coverage_extremes() {
        let p = vec![pred(1.0, 0.5); 4];
        let exact = vec![1.0; 4];
        assert_eq!(coverage95(&p, &exact).unwrap(), 1.0);
        let off: Vec<f64> = p.iter().map(|q| q.mean + 3.0 * q.variance.sqrt()).collect();
        assert_eq!(coverage95(&p, &off).unwrap(), 0.0);
    }

    #[test]
    fn coverage_monte_carlo_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let p = vec![pred(0.0, 1.0); n];
        let obs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let c = coverage95(&p, &obs).unwrap();
        assert!((c - 0.95).abs() < 0.005, "coverage {c}");
    }

    #[test]
    fn t_test_identical_errors_degenerate() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(paired_log_t_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn t_test_dominant_improvement() {
        let b: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let a: Vec<f64> = b.iter().map(|v| v / 10.0).collect();
        let p = paired_log_t_test(&a, &b).unwrap();
        assert!(p < 1e-10, "p = {p}");
    }

    #[test]
    fn t_test_one_tail_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..30).map(|_| rng.random::<f64>() + 0.1).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>() + 0.1).collect();
        let p_ab = paired_log_t_test(&a, &b).unwrap();
        let p_ba = paired_log_t_test(&b, &a).unwrap();
        assert_relative_eq!(p_ab + p_ba, 1.0, epsilon = 1e-10);
    }

    /// Regularized incomplete beta via Lentz's continued fraction; an
    /// independent route to the t CDF for checking the implementation.
    fn betainc(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta).exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            front * betacf(a, b, x) / a
        } else {
            1.0 - front * betacf(b, a, 1.0 - x) / b
        }
    }

    fn betacf(a: f64, b: f64, x: f64) -> f64 {
        let tiny = 1e-300;
        let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
        let mut c = 1.0f64;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < tiny {
            d = tiny;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..300 {
            let m = m as f64;
            let m2 = 2.0 * m;
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = 1.0 + aa / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            h *= d * c;
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = 1.0 + aa / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        h
    }

    fn ln_gamma(x: f64) -> f64 {
        // Lanczos approximation, g = 7.
        const COEF: [f64; 9] = [
            0.99999999999980993,
            676.5203681218851,
            -1259.1392167224028,
            771.32342877765313,
            -176.61502916214059,
            12.507343278686905,
            -0.13857109526572012,
            9.9843695780195716e-6,
            1.5056327351493116e-7,
        ];
        if x < 0.5 {
            let pi = std::f64::consts::PI;
            (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
        } else {
            let x = x - 1.0;
            let mut acc = COEF[0];
            for (i, c) in COEF.iter().enumerate().skip(1) {
                acc += c / (x + i as f64);
            }
            let t = x + 7.5;
            0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
        }
    }

    fn t_cdf_oracle(t: f64, df: f64) -> f64 {
        let x = df / (df + t * t);
        let tail = 0.5 * betainc(df / 2.0, 0.5, x);
        if t > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    #[test]
    fn t_test_matches_cdf_oracle() {
        // Fixed 20-element vectors.
        let a: Vec<f64> = (0..20).map(|i| 1.0 + 0.13 * (i as f64 * 0.7).sin().abs()).collect();
        let b: Vec<f64> = (0..20).map(|i| 1.1 + 0.21 * (i as f64 * 0.3).cos().abs()).collect();
        let p = paired_log_t_test(&a, &b).unwrap();

        let d: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.max(LOG_FLOOR).ln() - y.max(LOG_FLOOR).ln())
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let t = mean / (var / n).sqrt();
        let want = t_cdf_oracle(t, n - 1.0);
        assert!((p - want).abs() < 1e-8, "p {p} vs oracle {want}");
    }

    #[test]
    fn zero_errors_floored_before_log() {
        let a = vec![0.0, 0.0, 0.0, 1e-3];
        let b = vec![1.0, 1.0, 1.0, 1.0];
        let p = paired_log_t_test(&a, &b).unwrap();
        assert!(p.is_finite() && p < 0.05);
    }

    #[test]
    fn proper_score_identity_cases() {
        let eye = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_relative_eq!(proper_score(&y, &eye, &y).unwrap(), 0.0, epsilon = 1e-12);

        let off = DVector::from_vec(vec![1.0 + 2.0, -2.0, 0.5]);
        assert_relative_eq!(proper_score(&y, &eye, &off).unwrap(), -4.0, epsilon = 1e-12);
    }

    #[test]
    fn proper_score_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let n = 5;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let mean = DVector::from_fn(n, |_, _| rng.random::<f64>());
            let obs = DVector::from_fn(n, |_, _| rng.random::<f64>());
            let got = proper_score(&mean, &cov, &obs).unwrap();
            let inv = cov.clone().try_inverse().unwrap();
            let r = &obs - &mean;
            let want = -cov.determinant().ln() - (r.transpose() * inv * &r)[(0, 0)];
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn proper_score_maximized_at_truth() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let obs = DVector::from_vec(vec![0.7, -0.4]);
        let best = proper_score(&obs, &cov, &obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = DVector::from_fn(2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            assert!(proper_score(&m, &cov, &obs).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn proper_score_rejects_non_pd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            proper_score(&y, &bad, &y),
            Err(Error::Conditioning(_))
        ));
    }
}
