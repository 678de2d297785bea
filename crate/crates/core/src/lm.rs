//! Damped Gauss-Newton (Levenberg-Marquardt) least squares for small
//! parameter vectors.
//!
//! Each outer iteration factors the Jacobian once (`J = QR`); trial steps for
//! different damping values then only need a QR of the small stacked system
//! `[R; sqrt(λ)·D]`. `D` holds running maxima of the Jacobian column norms.

use nalgebra::{DMatrix, DVector};

/// A residual model `r(p) ∈ R^m` with Jacobian `∂r/∂p`.
pub trait Residuals {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    /// Writes residuals for `p` into `out`. Returns `false` when `p` lies
    /// outside the admissible region; the step is then rejected.
    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool;
    /// Writes the `m × n` Jacobian for `p` into `jac`.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Bound on the infinity norm of the gradient `Jᵀr`.
    pub gradient_tol: f64,
    /// Bound on `‖Dδ‖ / ‖Dp‖`.
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn minimize<R: Residuals>(problem: &R, init: &[f64], cfg: &LmConfig) -> LmReport {
    let n = problem.num_params();
    let m = problem.num_residuals();
    assert_eq!(init.len(), n);

    let mut p = init.to_vec();
    let mut r = vec![0.0; m];
    if !problem.residuals(&p, &mut r) || r.iter().any(|x| !x.is_finite()) {
        return LmReport {
            params: p,
            cost: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    let mut cost = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut scale = vec![0.0f64; n];
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut trial = vec![0.0; m];
    let mut iterations = 0;

    loop {
        if cost == 0.0 {
            return report(p, cost, iterations, true);
        }
        problem.jacobian(&p, &mut jac);
        if jac.iter().any(|x| !x.is_finite()) {
            return report(p, cost, iterations, false);
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        if grad.amax() <= cfg.gradient_tol {
            return report(p, cost, iterations, true);
        }
        for (j, s) in scale.iter_mut().enumerate() {
            let norm = jac.column(j).norm();
            *s = s.max(norm);
            if *s == 0.0 {
                *s = 1.0;
            }
        }

        let qr = jac.clone().qr();
        let rmat = qr.r();
        let qtr = qr.q().tr_mul(&rv);
        // Residual mass orthogonal to the column space of J.
        let outside = (cost - qtr.norm_squared()).max(0.0);

        loop {
            if iterations >= cfg.max_iterations {
                return report(p, cost, iterations, false);
            }
            iterations += 1;

            let step = damped_step(&rmat, &qtr, &scale, lambda);
            let Some(step) = step else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let dnorm: f64 = step
                .iter()
                .zip(&scale)
                .map(|(d, s)| (d * s).powi(2))
                .sum::<f64>()
                .sqrt();
            let pnorm: f64 = p
                .iter()
                .zip(&scale)
                .map(|(x, s)| (x * s).powi(2))
                .sum::<f64>()
                .sqrt();
            let small_step = dnorm <= cfg.step_tol * pnorm.max(f64::MIN_POSITIVE);

            let candidate: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let ok = problem.residuals(&candidate, &mut trial) && trial.iter().all(|x| x.is_finite());
            let new_cost = if ok { sum_sq(&trial) } else { f64::INFINITY };

            // Predicted cost of the linearized model at the step.
            let lin = &rmat * &step + &qtr;
            let predicted = cost - (lin.norm_squared() + outside);
            let rho = if predicted > 0.0 {
                (cost - new_cost) / predicted
            } else {
                -1.0
            };

            if ok && new_cost < cost && rho > 1e-4 {
                p = candidate;
                std::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                lambda *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                lambda = lambda.max(1e-300);
                nu = 2.0;
                if small_step {
                    return report(p, cost, iterations, true);
                }
                break;
            }
            if small_step {
                // No representable improvement remains.
                return report(p, cost, iterations, true);
            }
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() {
                return report(p, cost, iterations, false);
            }
        }
    }
}

fn report(params: Vec<f64>, cost: f64, iterations: usize, converged: bool) -> LmReport {
    LmReport {
        params,
        cost,
        iterations,
        converged,
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Solves `min ‖Rδ + Qᵀr‖² + λ‖Dδ‖²` through a QR of the stacked system.
fn damped_step(
    rmat: &DMatrix<f64>,
    qtr: &DVector<f64>,
    scale: &[f64],
    lambda: f64,
) -> Option<DVector<f64>> {
    let n = scale.len();
    let k = rmat.nrows();
    let mut a = DMatrix::zeros(k + n, n);
    a.view_mut((0, 0), (k, n)).copy_from(rmat);
    let sl = lambda.sqrt();
    for j in 0..n {
        a[(k + j, j)] = sl * scale[j];
    }
    let mut b = DVector::zeros(k + n);
    b.rows_mut(0, k).copy_from(&(-qtr));
    let qr = a.qr();
    let rhs = qr.q().tr_mul(&b);
    let r = qr.r();
    let step = r.solve_upper_triangular(&rhs.rows(0, n).into_owned())?;
    step.iter().all(|x| x.is_finite()).then_some(step)
}
