//! Bounded Levenberg–Marquardt for small nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub cost_tol: f64,
    /// Stop when the relative step length falls below this.
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            cost_tol: 1e-15,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// ½·Σ rᵢ²
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// s²·(JᵀJ)⁻¹ with s² = Σrᵢ² / (m − n); `None` if singular or m ≤ n.
    pub covariance: Option<DMatrix<f64>>,
}

/// Minimizes ½‖r(p)‖² subject to `lower ≤ p ≤ upper`. `jacobian` returns
/// the m×n matrix ∂rᵢ/∂pⱼ.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> DMatrix<f64>,
    initial: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> LmReport {
    let n = initial.len();
    let clamp = |p: &mut [f64]| {
        for j in 0..n {
            p[j] = p[j].clamp(lower[j], upper[j]);
        }
    };
    let cost_of = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();

    let mut p = initial.to_vec();
    clamp(&mut p);
    let mut r = residuals(&p);
    let mut cost = cost_of(&r);
    let mut lambda = -1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations && cost.is_finite() {
        iterations += 1;
        let jac = jacobian(&p);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * rv;
        if lambda < 0.0 {
            lambda = 1e-3 * (0..n).map(|j| jtj[(j, j)]).fold(0.0, f64::max).max(1e-300);
        }
        // Parameters pinned at a bound with the descent direction pointing
        // outward are frozen for this step, so the free ones still move.
        let active: Vec<bool> = (0..n)
            .map(|j| (p[j] <= lower[j] && grad[j] > 0.0) || (p[j] >= upper[j] && grad[j] < 0.0))
            .collect();
        let mut rhs = -&grad;
        for j in (0..n).filter(|&j| active[j]) {
            rhs[j] = 0.0;
        }
        if rhs.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e300 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
                if active[j] {
                    for k in 0..n {
                        a[(j, k)] = 0.0;
                        a[(k, j)] = 0.0;
                    }
                    a[(j, j)] = 1.0;
                }
            }
            let Some(step) = a.lu().solve(&rhs) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial);
            let r_trial = residuals(&trial);
            let c_trial = cost_of(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let step_norm: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel_drop = (cost - c_trial) / cost.max(1e-300);
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-300);
                accepted = true;
                if rel_drop < opts.cost_tol || step_norm <= opts.step_tol * (p_norm + opts.step_tol) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a (constrained) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let m = r.len();
    let covariance = if m > n {
        let jac = jacobian(&p);
        let s2 = 2.0 * cost / (m - n) as f64;
        (jac.transpose() * &jac).try_inverse().map(|inv| inv * s2)
    } else {
        None
    };
    LmReport {
        params: p,
        cost,
        iterations,
        converged,
        covariance,
    }
}
