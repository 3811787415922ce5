//! Response models `R(theta, x)` and the least-squares fits that seed the
//! moment-based regression estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;

/// Regression function with analytic Jacobian.
///
/// `Linear` uses every column of the design; the nonlinear forms read the
/// scalar regressor from column 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Response {
    /// `R = x . theta`
    Linear,
    /// `R = theta1 * exp(theta2 * x)`
    Exponential,
    /// `R = theta1 / (1 + exp(theta2 + theta3 * x))`
    Growth,
}

impl Response {
    pub fn param_dim(&self, x: &DMatrix<f64>) -> usize {
        match self {
            Response::Linear => x.ncols(),
            Response::Exponential => 2,
            Response::Growth => 3,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Response::Linear)
    }

    fn check(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<()> {
        let k = self.param_dim(x);
        if theta.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: theta.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("design has no columns".into()));
        }
        Ok(())
    }

    fn eval_row(&self, theta: &[f64], x: &DMatrix<f64>, row: usize) -> f64 {
        match self {
            Response::Linear => (0..x.ncols()).map(|c| x[(row, c)] * theta[c]).sum(),
            Response::Exponential => theta[0] * (theta[1] * x[(row, 0)]).exp(),
            Response::Growth => theta[0] / (1.0 + (theta[1] + theta[2] * x[(row, 0)]).exp()),
        }
    }

    fn gradient_row(&self, theta: &[f64], x: &DMatrix<f64>, row: usize, out: &mut [f64]) {
        match self {
            Response::Linear => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = x[(row, c)];
                }
            }
            Response::Exponential => {
                let xv = x[(row, 0)];
                let e = (theta[1] * xv).exp();
                out[0] = e;
                out[1] = theta[0] * xv * e;
            }
            Response::Growth => {
                let xv = x[(row, 0)];
                let e = (theta[1] + theta[2] * xv).exp();
                let d = 1.0 + e;
                out[0] = 1.0 / d;
                let common = -theta[0] * e / (d * d);
                out[1] = common;
                out[2] = common * xv;
            }
        }
    }

    /// Fitted values `R(theta, x_v)`.
    pub fn fitted(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check(theta, x)?;
        Ok(DVector::from_fn(x.nrows(), |r, _| self.eval_row(theta, x, r)))
    }

    /// Jacobian `dR(theta, x_v)/dtheta_j`, one row per observation.
    pub fn jacobian(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(theta, x)?;
        let k = theta.len();
        let mut jac = DMatrix::zeros(x.nrows(), k);
        let mut buf = vec![0.0; k];
        for r in 0..x.nrows() {
            self.gradient_row(theta, x, r, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                jac[(r, c)] = *v;
            }
        }
        Ok(jac)
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub theta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LeastSquaresFit {
    pub fn sse(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Ordinary (linear) or nonlinear least squares.
///
/// Linear responses are solved directly by QR; `init` is ignored. Nonlinear
/// responses use Levenberg-Marquardt from `init`.
pub fn least_squares_fit(
    response: Response,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: Option<&[f64]>,
) -> Result<LeastSquaresFit> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let k = response.param_dim(x);
    if y.len() <= k {
        return Err(Error::InsufficientData {
            needed: k + 1,
            got: y.len(),
        });
    }
    if response.is_linear() {
        let theta = least_squares(x, y)?;
        let residuals = y - x * &theta;
        return Ok(LeastSquaresFit {
            theta,
            residuals,
            iterations: 1,
            converged: true,
        });
    }
    let init = init.ok_or_else(|| {
        Error::InvalidArgument("nonlinear least squares needs an initial value".into())
    })?;
    levenberg_marquardt(
        |theta| {
            let r = y - response.fitted(theta.as_slice(), x)?;
            let j = -response.jacobian(theta.as_slice(), x)?;
            Ok((r, j))
        },
        DVector::from_column_slice(init),
    )
    .map(|(theta, residuals, iterations, converged)| LeastSquaresFit {
        theta,
        residuals,
        iterations,
        converged,
    })
}

/// Minimises `|r(theta)|^2` given `(r, dr/dtheta)`.
pub(crate) fn levenberg_marquardt<F>(
    mut model: F,
    init: DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, usize, bool)>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    const MAX_ITER: usize = 500;
    let mut theta = init;
    let (mut r, mut j) = model(&theta)?;
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut lambda = 1e-3;
    for iter in 1..=MAX_ITER {
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= 1e-14 * (1.0 + cost) * (1.0 + jtj.amax()).sqrt() {
            return Ok((theta, r, iter, true));
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match a.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = &theta + &step;
            let trial = model(&candidate);
            if let Ok((r_new, j_new)) = trial {
                let cost_new = r_new.norm_squared();
                // a step within rounding of the current cost is still taken
                // (once) so the parameters get the last Gauss-Newton digits
                if cost_new.is_finite() && cost_new <= cost * (1.0 + 4.0 * f64::EPSILON) {
                    let rel_change = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
                    let small_step = step.amax() <= 1e-12 * (1.0 + theta.amax());
                    theta = candidate;
                    r = r_new;
                    j = j_new;
                    cost = cost_new;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    if rel_change <= 0.0 || small_step {
                        return Ok((theta, r, iter, true));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a (numerical) minimum
            return Ok((theta, r, iter, true));
        }
    }
    Ok((theta, r, MAX_ITER, false))
}

/// Result of a damped Newton root search.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RootResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub scale: f64,
}

/// Damped Newton iteration for `g(x) = 0` with a central-difference Jacobian.
///
/// `g` returns the residual vector and a magnitude scale; convergence means
/// `|g|_inf <= rtol * scale`. Steps are halved up to 20 times while the
/// residual norm does not decrease.
pub(crate) fn damped_newton<G>(
    mut g: G,
    init: DVector<f64>,
    rtol: f64,
    max_iter: usize,
) -> Result<RootResult>
where
    G: FnMut(&DVector<f64>) -> Result<(DVector<f64>, f64)>,
{
    let k = init.len();
    let mut x = init;
    let (mut res, mut scale) = g(&x)?;
    let finite = |v: &DVector<f64>| v.iter().all(|e| e.is_finite());
    if !finite(&res) {
        return Err(Error::NonFiniteObjective);
    }
    for iter in 0..=max_iter {
        let norm = res.amax();
        if norm <= rtol * scale {
            return Ok(RootResult {
                x,
                iterations: iter,
                residual: norm,
                scale,
            });
        }
        if iter == max_iter {
            break;
        }
        let mut jac = DMatrix::zeros(k, k);
        for c in 0..k {
            let h = 1e-6 * (1.0 + x[c].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (gp, _) = g(&xp)?;
            let (gm, _) = g(&xm)?;
            jac.set_column(c, &((gp - gm) / (2.0 * h)));
        }
        let step = jac.lu().solve(&(-&res)).ok_or(Error::NoConvergence {
            iterations: iter,
            residual: norm,
        })?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..=20 {
            let candidate = &x + &step * t;
            if let Ok((r_new, s_new)) = g(&candidate) {
                if finite(&r_new) && r_new.amax() < norm {
                    x = candidate;
                    res = r_new;
                    scale = s_new;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: norm,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res.amax(),
    })
}
