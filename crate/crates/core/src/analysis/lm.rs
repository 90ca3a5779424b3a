use nalgebra::{DMatrix, DVector};

/// Stopping rules for [`minimize`].
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step size below which the iteration stops.
    pub x_tol: f64,
    /// Relative cost reduction at or below which the iteration stops.
    pub f_tol: f64,
    /// Infinity norm of the scaled gradient below which the iteration stops.
    pub g_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            x_tol: 1e-12,
            f_tol: 0.0,
            g_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

/// A least-squares problem: residual vector and its Jacobian at `p`.
pub trait Problem {
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>>;
    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>>;
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling.
///
/// A converged result is finished with undamped Gauss-Newton steps for as
/// long as they keep shrinking. Near the minimum the cost is flat to
/// rounding, so descent tests alone stop short of full parameter precision.
pub fn minimize<P: Problem>(problem: &P, p0: DVector<f64>, opts: &LmOptions) -> LmOutcome {
    let outcome = descend(problem, p0, opts);
    if outcome.converged {
        polish(problem, outcome)
    } else {
        outcome
    }
}

fn polish<P: Problem>(problem: &P, mut best: LmOutcome) -> LmOutcome {
    let mut last = f64::INFINITY;
    for _ in 0..8 {
        let j = &best.jacobian;
        let Some(step) = (j.transpose() * j)
            .lu()
            .solve(&(-(j.transpose() * &best.residuals)))
        else {
            break;
        };
        let size = step.norm();
        if !(size < 0.5 * last) {
            break;
        }
        last = size;
        let p = &best.params + step;
        let (Some(r), Some(j)) = (problem.residuals(&p), problem.jacobian(&p)) else {
            break;
        };
        let cost = 0.5 * r.norm_squared();
        if !(cost <= best.cost * (1.0 + 1e-9)) {
            break;
        }
        best.params = p;
        best.residuals = r;
        best.jacobian = j;
        best.cost = cost;
        if size <= f64::EPSILON * best.params.norm() {
            break;
        }
    }
    best
}

fn descend<P: Problem>(problem: &P, p0: DVector<f64>, opts: &LmOptions) -> LmOutcome {
    let mut p = p0;
    let Some(mut r) = problem.residuals(&p) else {
        return failed(p, "residuals not finite at the starting point");
    };
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut j = match problem.jacobian(&p) {
        Some(j) => j,
        None => return failed(p, "jacobian not finite at the starting point"),
    };
    let n = p.len();
    for it in 0..opts.max_iterations {
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let diag: DVector<f64> = DVector::from_fn(n, |i, _| jtj[(i, i)].max(1e-300));
        let scaled_grad = (0..n)
            .map(|i| g[i].abs() / diag[i].sqrt())
            .fold(0.0, f64::max);
        if cost == 0.0 || scaled_grad <= opts.g_tol * (2.0 * cost).sqrt() {
            return done(p, cost, r, j, it, true, "gradient vanished");
        }
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * diag[i];
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return done(p, cost, r, j, it, false, "damped normal equations singular");
                }
                continue;
            };
            let trial = &p + &step;
            let trial_r = problem.residuals(&trial);
            let trial_cost = trial_r
                .as_ref()
                .map(|r| 0.5 * r.norm_squared())
                .unwrap_or(f64::INFINITY);
            if trial_cost.is_finite() && trial_cost <= cost {
                let small_step = step.norm() <= opts.x_tol * (p.norm() + opts.x_tol);
                let small_gain = cost - trial_cost <= opts.f_tol * cost;
                p = trial;
                r = trial_r.expect("finite cost implies residuals");
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-15);
                j = match problem.jacobian(&p) {
                    Some(j) => j,
                    None => return done(p, cost, r, j, it + 1, false, "jacobian not finite"),
                };
                if small_step || small_gain {
                    return done(p, cost, r, j, it + 1, true, "step converged");
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no descent direction left at machine precision
                return done(p, cost, r, j, it, true, "no further reduction");
            }
        }
    }
    done(
        p,
        cost,
        r,
        j,
        opts.max_iterations,
        false,
        "iteration limit reached",
    )
}

fn failed(p: DVector<f64>, msg: &str) -> LmOutcome {
    LmOutcome {
        params: p,
        cost: f64::INFINITY,
        residuals: DVector::zeros(0),
        jacobian: DMatrix::zeros(0, 0),
        iterations: 0,
        converged: false,
        message: msg.into(),
    }
}

fn done(
    params: DVector<f64>,
    cost: f64,
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    msg: &str,
) -> LmOutcome {
    LmOutcome {
        params,
        cost,
        residuals,
        jacobian,
        iterations,
        converged,
        message: msg.into(),
    }
}

/// (J^T J)^-1 scaled by the residual variance, or by one for absolute weights.
pub fn covariance(outcome: &LmOutcome, absolute_weights: bool) -> Option<DMatrix<f64>> {
    let j = &outcome.jacobian;
    let (m, n) = j.shape();
    let jtj = j.transpose() * j;
    let inv = jtj.try_inverse()?;
    let scale = if absolute_weights {
        1.0
    } else if m > n {
        2.0 * outcome.cost / (m - n) as f64
    } else {
        0.0
    };
    Some(inv * scale)
}
