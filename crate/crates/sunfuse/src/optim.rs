//! Small box-constrained quasi-Newton optimizer used for likelihood maximization.
//!
//! BFGS with Armijo backtracking and projection onto box bounds. Objective
//! evaluations may fail (e.g. covariance not positive definite); such points
//! are treated as infinitely bad and the line search backs off.

/// Outcome of a single optimization run.
#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
}

pub(crate) struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

const GRAD_TOL: f64 = 1e-5;
const F_TOL: f64 = 1e-10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 12;
const MIN_STEP: f64 = 1e-10;

/// Minimize `f` starting at `x0`, keeping iterates inside `bounds`.
///
/// `f` returns `(value, gradient)` or `None` when the point is infeasible.
pub(crate) fn bfgs_box<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    max_iter: usize,
) -> Option<OptimResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut n_evals = 1usize;
    let (mut fx, mut gx) = f(&x)?;

    // Inverse Hessian approximation. The initial diagonal is scaled by the
    // gradient magnitude so the first trial step stays O(1) in the
    // transformed coordinates instead of overshooting.
    let g_inf = gx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h0 = 1.0 / g_inf.max(1.0);
    let mut h = vec![0.0f64; n * n];
    for i in 0..n {
        h[i * n + i] = h0;
    }

    let mut converged = false;
    for _ in 0..max_iter {
        // Projected gradient: zero out components pushing outside the box.
        // The tolerance scales with the objective, which grows with the
        // data size for likelihoods.
        let pg_norm = projected_grad_norm(&x, &gx, bounds);
        if pg_norm < GRAD_TOL * fx.abs().max(1.0) {
            converged = true;
            break;
        }

        // Search direction d = -H g.
        let mut d = vec![0.0f64; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += h[i * n + j] * gx[j];
            }
            d[i] = -acc;
        }
        // Fall back to steepest descent if d is not a descent direction.
        let mut dg: f64 = d.iter().zip(&gx).map(|(a, b)| a * b).sum();
        if !dg.is_finite() || dg >= 0.0 {
            for i in 0..n {
                d[i] = -h0 * gx[i];
                for j in 0..n {
                    h[i * n + j] = if i == j { h0 } else { 0.0 };
                }
            }
            dg = -h0 * gx.iter().map(|g| g * g).sum::<f64>();
        }
        // No meaningful descent left at this scale.
        if dg > -1e-12 * fx.abs().max(1.0) {
            converged = true;
            break;
        }

        // Backtracking line search with projection; the initial step keeps
        // the per-coordinate move bounded.
        let d_inf = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if d_inf > 2.0 { 2.0 / d_inf } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if step < MIN_STEP {
                break;
            }
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            bounds.project(&mut xt);
            let actual_step: f64 = xt
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if actual_step == 0.0 {
                step *= 0.5;
                continue;
            }
            n_evals += 1;
            if let Some((ft, gt)) = f(&xt) {
                let slope: f64 = gx.iter().zip(&d).map(|(g, di)| g * di).sum();
                if ft <= fx + ARMIJO_C1 * step * slope.min(0.0) || ft < fx {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((xt, ft, gt)) = accepted else {
            converged = true; // no further progress possible
            break;
        };

        // BFGS update on the inverse Hessian.
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = vec![0.0f64; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h[i * n + j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * rho * (sy + yhy) * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        let f_drop = (fx - ft).abs();
        x = xt;
        gx = gt;
        let rel_drop = f_drop / fx.abs().max(1.0);
        fx = ft;
        if rel_drop < F_TOL {
            converged = true;
            break;
        }
    }

    Some(OptimResult {
        x,
        value: fx,
        n_evals,
        converged,
    })
}

fn projected_grad_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let gi = g[i];
        let active_lo = x[i] <= bounds.lo[i] && gi > 0.0;
        let active_hi = x[i] >= bounds.hi[i] && gi < 0.0;
        if !(active_lo || active_hi) {
            m = m.max(gi.abs());
        }
    }
    m
}
