//! Numerical optimizers shared by model refinement and pose-graph
//! adjustment: a BFGS quasi-Newton ascent with numerical gradients and a
//! strict evaluation budget, and a Levenberg-damped Gauss-Newton
//! least-squares solver.
//!
//! Both are fully deterministic: fixed step rules, no randomness.

use nalgebra::{DMatrix, DVector};

/// Options for [`bfgs_maximize`].
#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Hard cap on objective evaluations (gradients count one evaluation
    /// per stencil point).
    pub max_evals: usize,
    /// Central-difference step for the numerical gradient.
    pub grad_step: f64,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this.
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_evals: 200,
            grad_step: 1e-6,
            grad_tol: 1e-8,
            step_tol: 1e-12,
        }
    }
}

/// Maximizes `f` from `x0` by BFGS with backtracking line search. Never
/// returns a point worse than `x0`; never calls `f` more than
/// `opts.max_evals` times.
pub fn bfgs_maximize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &BfgsOptions,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    if dim == 0 {
        let v = f(x0);
        return (x0.to_vec(), v);
    }
    let mut evals = 0usize;
    // Internally minimize the negated objective.
    let mut phi = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        -f(x)
    };

    let mut x = DVector::from_column_slice(x0);
    let mut fx = phi(x.as_slice(), &mut evals);
    let grad_cost = 2 * dim;

    let numeric_grad = |phi: &mut dyn FnMut(&[f64], &mut usize) -> f64,
                        x: &DVector<f64>,
                        evals: &mut usize|
     -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        let mut probe = x.clone();
        for i in 0..dim {
            probe[i] = x[i] + opts.grad_step;
            let hi = phi(probe.as_slice(), evals);
            probe[i] = x[i] - opts.grad_step;
            let lo = phi(probe.as_slice(), evals);
            probe[i] = x[i];
            g[i] = (hi - lo) / (2.0 * opts.grad_step);
        }
        g
    };

    if evals + grad_cost > opts.max_evals {
        return (x.as_slice().to_vec(), -fx);
    }
    let mut g = numeric_grad(&mut phi, &x, &mut evals);
    let mut h = DMatrix::<f64>::identity(dim, dim);

    loop {
        if g.norm() < opts.grad_tol {
            break;
        }
        let mut p = -(&h * &g);
        let mut g_dot_p = g.dot(&p);
        if !(g_dot_p < 0.0) {
            // Curvature information went bad; restart from steepest descent.
            h = DMatrix::identity(dim, dim);
            p = -g.clone();
            g_dot_p = -g.norm_squared();
            if g_dot_p == 0.0 {
                break;
            }
        }
        // Backtracking Armijo line search.
        let mut t = 1.0;
        let mut accepted: Option<(DVector<f64>, f64)> = None;
        while t >= 1e-16 {
            if evals >= opts.max_evals {
                break;
            }
            let x_new = &x + &p * t;
            let f_new = phi(x_new.as_slice(), &mut evals);
            if f_new <= fx + 1e-4 * t * g_dot_p {
                accepted = Some((x_new, f_new));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else { break };
        let s = &x_new - &x;
        let step_norm = s.norm();
        x = x_new;
        fx = f_new;
        if step_norm < opts.step_tol || evals + grad_cost > opts.max_evals {
            break;
        }
        let g_new = numeric_grad(&mut phi, &x, &mut evals);
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            // Standard inverse-Hessian BFGS update.
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(dim, dim);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * h * &right + &s * s.transpose() * rho;
        } else {
            h = DMatrix::identity(dim, dim);
        }
        g = g_new;
    }
    (x.as_slice().to_vec(), -fx)
}

/// Options for [`gauss_newton`].
#[derive(Debug, Clone)]
pub struct GaussNewtonOptions {
    pub max_iters: usize,
    /// Initial Levenberg damping.
    pub lambda_init: f64,
    /// Damping multiplier on rejected steps (and divisor on accepted ones).
    pub lambda_factor: f64,
    /// Declare convergence when the accepted update is shorter than this.
    pub update_tol: f64,
    /// Give up when damping exceeds this.
    pub lambda_max: f64,
    /// Central-difference step for the numeric Jacobian.
    pub jacobian_step: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            update_tol: 1e-9,
            lambda_max: 1e12,
            jacobian_step: 1e-6,
        }
    }
}

/// Outcome of a damped Gauss-Newton run: the best iterate, its cost
/// `½‖r‖²`, and whether the update-norm convergence test was met.
#[derive(Debug, Clone)]
pub struct GaussNewtonResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    pub iters: usize,
}

/// Minimizes `½‖r(x)‖²` with a numeric Jacobian and Levenberg damping:
/// solve `(JᵀJ + λI)δ = −Jᵀr`, accept cost-decreasing steps (λ shrinks),
/// otherwise raise λ and retry with the same Jacobian.
pub fn gauss_newton<R: Fn(&[f64]) -> DVector<f64>>(
    residual: R,
    x0: &[f64],
    opts: &GaussNewtonOptions,
) -> GaussNewtonResult {
    let dim = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut r = residual(x.as_slice());
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = opts.lambda_init;
    let mut converged = dim == 0 || cost == 0.0;
    let mut iters = 0usize;

    'outer: while !converged && iters < opts.max_iters {
        iters += 1;
        // Numeric Jacobian at the current iterate.
        let m = r.len();
        let mut j = DMatrix::zeros(m, dim);
        let mut probe = x.clone();
        for c in 0..dim {
            probe[c] = x[c] + opts.jacobian_step;
            let hi = residual(probe.as_slice());
            probe[c] = x[c] - opts.jacobian_step;
            let lo = residual(probe.as_slice());
            probe[c] = x[c];
            j.set_column(c, &((hi - lo) / (2.0 * opts.jacobian_step)));
        }
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for i in 0..dim {
                a[(i, i)] += lambda;
            }
            let delta = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(d) => d,
                    None => {
                        lambda *= opts.lambda_factor;
                        if lambda > opts.lambda_max {
                            break 'outer;
                        }
                        continue;
                    }
                },
            };
            let x_new = &x + &delta;
            let r_new = residual(x_new.as_slice());
            let cost_new = 0.5 * r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                x = x_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / opts.lambda_factor).max(1e-12);
                if delta.norm() < opts.update_tol {
                    converged = true;
                }
                break;
            }
            lambda *= opts.lambda_factor;
            if lambda > opts.lambda_max {
                break 'outer;
            }
        }
    }
    GaussNewtonResult {
        x: x.as_slice().to_vec(),
        cost,
        converged,
        iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::cell::Cell;

    #[test]
    fn bfgs_finds_quadratic_maximum() {
        // f(x) = −(x−a)ᵀ M (x−a) with SPD M peaks exactly at a.
        let a = [1.0, -2.0, 0.5];
        let f = |x: &[f64]| {
            let d0 = x[0] - a[0];
            let d1 = x[1] - a[1];
            let d2 = x[2] - a[2];
            -(2.0 * d0 * d0 + 1.0 * d1 * d1 + 0.5 * d2 * d2 + 0.3 * d0 * d1)
        };
        let (x, fx) = bfgs_maximize(f, &[0.0, 0.0, 0.0], &BfgsOptions::default());
        for i in 0..3 {
            assert_relative_eq!(x[i], a[i], epsilon = 1e-5);
        }
        assert!(fx > -1e-9);
    }

    #[test]
    fn bfgs_never_regresses_and_respects_budget() {
        let count = Cell::new(0usize);
        let f = |x: &[f64]| {
            count.set(count.get() + 1);
            // Banana-shaped objective (negated Rosenbrock).
            -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        };
        let x0: [f64; 2] = [-1.2, 1.0];
        let f0 = -((1.0 - x0[0]).powi(2) + 100.0 * (x0[1] - x0[0] * x0[0]).powi(2));
        let opts = BfgsOptions {
            max_evals: 150,
            ..BfgsOptions::default()
        };
        let (_, fx) = bfgs_maximize(f, &x0, &opts);
        assert!(fx >= f0, "regressed: {fx} < {f0}");
        assert!(count.get() <= 150, "used {} evaluations", count.get());
    }

    #[test]
    fn bfgs_handles_zero_dimensional_input() {
        let (x, fx) = bfgs_maximize(|_| 42.0, &[], &BfgsOptions::default());
        assert!(x.is_empty());
        assert_eq!(fx, 42.0);
    }

    #[test]
    fn gauss_newton_solves_linear_least_squares_exactly() {
        // Oracle: the SVD pseudoinverse solution of an overdetermined
        // linear system.
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_column_slice(&[6.0, 5.0, 7.0, 10.0]);
        let oracle = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        let res = gauss_newton(
            |x| &a * DVector::from_column_slice(x) - &b,
            &[0.0, 0.0],
            &GaussNewtonOptions::default(),
        );
        assert!(res.converged);
        assert_relative_eq!(res.x[0], oracle[0], epsilon = 1e-7);
        assert_relative_eq!(res.x[1], oracle[1], epsilon = 1e-7);
    }

    #[test]
    fn gauss_newton_fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| 0.2 * i as f64).collect();
        let truth = [2.0, 0.7];
        let ys: Vec<f64> = ts.iter().map(|t| truth[0] * (-truth[1] * t).exp()).collect();
        let res = gauss_newton(
            |x| {
                DVector::from_iterator(
                    ts.len(),
                    ts.iter()
                        .zip(&ys)
                        .map(|(t, y)| x[0] * (-x[1] * t).exp() - y),
                )
            },
            &[1.0, 0.1],
            &GaussNewtonOptions::default(),
        );
        assert!(res.converged);
        assert_relative_eq!(res.x[0], truth[0], epsilon = 1e-6);
        assert_relative_eq!(res.x[1], truth[1], epsilon = 1e-6);
        assert!(res.cost < 1e-12);
    }

    #[test]
    fn gauss_newton_is_immediately_done_at_zero_residual() {
        let res = gauss_newton(
            |x| DVector::from_column_slice(&[x[0] - 1.0]),
            &[1.0],
            &GaussNewtonOptions::default(),
        );
        assert!(res.converged);
        assert_eq!(res.cost, 0.0);
    }
}
