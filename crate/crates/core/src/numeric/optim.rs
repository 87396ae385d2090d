//! Quasi-Newton maximization with numerically differentiated gradients.
//!
//! BFGS on the unconstrained (transformed) parameter scale. The objective is
//! deterministic for a fixed Monte Carlo sample set, so central finite
//! differences are well behaved. An optional infinity-norm trust box around a
//! reference point keeps importance-sampled objectives from wandering into
//! regions where the weights degenerate.

use ndarray::{Array1, Array2};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Relative step for central-difference gradients.
    pub fd_step_rel: f64,
    /// Infinity-norm radius around the starting point; steps are clamped to it.
    pub trust_radius: Option<f64>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 120,
            grad_tol: 1e-5,
            step_tol: 1e-9,
            fd_step_rel: 1e-5,
            trust_radius: Some(3.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub n_evaluations: usize,
    pub converged: bool,
}

/// Central-difference gradient of `f` at a point with value `f0`.
///
/// Falls back to one-sided differences when a probe lands in an infeasible
/// (non-finite) region, and to zero when both sides are infeasible.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    rel_step: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - f0) / h,
            (false, true) => (f0 - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

/// Symmetrized central-difference Hessian of `f` with per-parameter relative
/// step `rel_step`.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    rel_step: f64,
) -> Array2<f64> {
    let n = x.len();
    let mut h = Array2::<f64>::zeros((n, n));
    let steps: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut xp = x.to_vec();
    // diagonal
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[[i, i]] = (fp - 2.0 * f0 + fm) / (hi * hi);
    }
    // off-diagonal
    for i in 0..n {
        for j in (i + 1)..n {
            let (hi, hj) = (steps[i], steps[j]);
            xp[i] = x[i] + hi;
            xp[j] = x[j] + hj;
            let fpp = f(&xp);
            xp[j] = x[j] - hj;
            let fpm = f(&xp);
            xp[i] = x[i] - hi;
            let fmm = f(&xp);
            xp[j] = x[j] + hj;
            let fmp = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[[i, j]] = v;
            h[[j, i]] = v;
        }
    }
    h
}

/// Maximize `f` from `x0`. Internally minimizes the negated objective.
pub fn maximize<F: FnMut(&[f64]) -> f64>(f: &mut F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut neg = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        -f(x)
    };

    let lo: Vec<f64> = match opts.trust_radius {
        Some(r) => x0.iter().map(|v| v - r).collect(),
        None => vec![f64::NEG_INFINITY; n],
    };
    let hi: Vec<f64> = match opts.trust_radius {
        Some(r) => x0.iter().map(|v| v + r).collect(),
        None => vec![f64::INFINITY; n],
    };
    let clamp = |x: &mut [f64]| {
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };

    let mut x = Array1::from(x0.to_vec());
    let mut fx = neg(x.as_slice().unwrap(), &mut evals);
    let mut grad = Array1::from(numerical_gradient(
        &mut |p| neg(p, &mut evals),
        x.as_slice().unwrap(),
        fx,
        opts.fd_step_rel,
    ));
    let mut h_inv = Array2::<f64>::eye(n);
    let mut converged = false;
    let mut iterations = 0usize;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let gnorm = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir = -h_inv.dot(&grad);
        // fall back to steepest descent if the direction is not a descent one
        if dir.dot(&grad) >= 0.0 {
            h_inv = Array2::eye(n);
            dir = -grad.clone();
        }

        // backtracking Armijo line search with trust-box projection
        let g_dot_d = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..30 {
            let mut cand: Array1<f64> = &x + &(t * &dir);
            clamp(cand.as_slice_mut().unwrap());
            let fc = neg(cand.as_slice().unwrap(), &mut evals);
            let actual_step: Array1<f64> = &cand - &x;
            if fc <= fx + 1e-4 * t * g_dot_d || (fc < fx && actual_step.dot(&actual_step) > 0.0) {
                x_new = cand;
                f_new = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no improvement along the quasi-Newton direction
            converged = gnorm < 10.0 * opts.grad_tol;
            break;
        }

        let s: Array1<f64> = &x_new - &x;
        let step_inf = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let g_new = Array1::from(numerical_gradient(
            &mut |p| neg(p, &mut evals),
            x_new.as_slice().unwrap(),
            f_new,
            opts.fd_step_rel,
        ));
        let y: Array1<f64> = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.dot(&s).sqrt() * y.dot(&y).sqrt() {
            // BFGS inverse update
            let rho = 1.0 / sy;
            let hy = h_inv.dot(&y);
            let yhy = y.dot(&hy);
            let ss = outer(&s, &s);
            let hys = outer(&hy, &s);
            let shy = outer(&s, &hy);
            h_inv = &h_inv + &(((sy + yhy) * rho * rho) * &ss) - &(rho * (&hys + &shy));
        }
        x = x_new;
        fx = f_new;
        grad = g_new;
        if step_inf < opts.step_tol {
            converged = true;
            break;
        }
    }

    BfgsOutcome {
        x: x.to_vec(),
        value: -fx,
        iterations,
        n_evaluations: evals,
        converged,
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let n = a.len();
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = a[i] * b[j];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn maximizes_concave_quadratic() {
        let mut f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2);
        let out = maximize(&mut f, &[0.0, 0.0], &BfgsOptions::default());
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(out.x[1], -0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(out.value, 0.0, epsilon = 1e-7);
    }

    #[test]
    fn maximizes_rosenbrock_negated() {
        let mut f = |x: &[f64]| {
            -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        };
        let out = maximize(
            &mut f,
            &[-1.2, 1.0],
            &BfgsOptions {
                max_iterations: 500,
                trust_radius: None,
                ..BfgsOptions::default()
            },
        );
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn respects_trust_box() {
        let mut f = |x: &[f64]| -(x[0] - 10.0).powi(2);
        let out = maximize(
            &mut f,
            &[0.0],
            &BfgsOptions {
                trust_radius: Some(2.0),
                ..BfgsOptions::default()
            },
        );
        assert!(out.x[0] <= 2.0 + 1e-12);
    }

    #[test]
    fn hessian_of_quadratic() {
        let mut f = |x: &[f64]| -0.5 * (3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 4.0 * x[1] * x[1]);
        let h = numerical_hessian(&mut f, &[0.3, -0.2], 1e-4);
        assert_abs_diff_eq!(h[[0, 0]], -3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[[0, 1]], -1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[[1, 1]], -4.0, epsilon = 1e-5);
    }
}
