//! Second-order least squares.
//!
//! Minimises `sum_v (y_v - R_v)^2 + omega (y_v^2 - R_v^2 - sigma^2)^2` over
//! `(theta, sigma^2)`. For fixed `theta` the objective is quadratic in
//! `sigma^2` with minimiser `mean(y^2 - R^2)`, so `sigma^2` is profiled out and
//! the remaining problem is a stacked nonlinear least-squares fit in `theta`.
//!
//! The scalar weight puts no cross term between the two residuals. When the
//! errors are skewed and the response is positive, the second-moment residual
//! then correlates with the first in the wrong direction and no `omega > 0`
//! improves on least squares. [`optimal_weights`] gives the per-observation
//! weight matrix (inverse covariance of the residual pair), which recovers the
//! efficiency of PMM2.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::CumulantSet;
use crate::regression::{levenberg_marquardt, Response};

/// Lower end of the `omega` search grid.
pub const OMEGA_MIN: f64 = 1e-4;
/// Upper end of the `omega` search grid.
pub const OMEGA_MAX: f64 = 1e2;
const OMEGA_GRID: usize = 121;

/// Symmetric 2x2 weight `[[first, cross], [cross, second]]` on the residual
/// pair `(y - R, y^2 - R^2 - sigma^2)` of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWeight {
    pub first: f64,
    pub cross: f64,
    pub second: f64,
}

impl PairWeight {
    pub fn scalar(omega: f64) -> Self {
        Self {
            first: 1.0,
            cross: 0.0,
            second: omega,
        }
    }

    /// `L'` with `W = L L'`, as `(l11, l21, l22)`.
    fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.first.sqrt();
        let l21 = self.cross / l11;
        let l22 = (self.second - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }
}

/// Data, response and weight of an SLS fit. `weights`, when set, replaces the
/// scalar `omega` with one [`PairWeight`] per observation.
#[derive(Debug, Clone, Copy)]
pub struct SlsProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub response: Response,
    pub omega: f64,
    pub weights: Option<&'a [PairWeight]>,
}

/// SLS estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SlsEstimate {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

impl<'a> SlsProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, response: Response, omega: f64) -> Result<Self> {
        if !omega.is_finite() || omega < 0.0 {
            return Err(Error::InvalidArgument(format!("omega must be finite and >= 0, got {omega}")));
        }
        if y.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        Ok(Self {
            x,
            y,
            response,
            omega,
            weights: None,
        })
    }

    /// Problem with per-observation weights; each must be positive definite.
    pub fn with_weights(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        response: Response,
        weights: &'a [PairWeight],
    ) -> Result<Self> {
        let mut p = Self::new(x, y, response, 0.0)?;
        if weights.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| {
            !(w.first > 0.0 && w.first * w.second - w.cross * w.cross > 0.0) || !w.second.is_finite()
        }) {
            return Err(Error::InvalidArgument(format!("weight {w:?} is not positive definite")));
        }
        p.weights = Some(weights);
        Ok(p)
    }

    fn weight(&self, v: usize) -> PairWeight {
        match self.weights {
            Some(w) => w[v],
            None => PairWeight::scalar(self.omega),
        }
    }

    /// Full objective at `(theta, sigma2)`.
    pub fn objective(&self, theta: &[f64], sigma2: f64) -> Result<f64> {
        let r = self.response.fitted(theta, self.x)?;
        Ok((0..self.y.len())
            .map(|v| {
                let (y, r) = (self.y[v], r[v]);
                let first = y - r;
                let second = y * y - r * r - sigma2;
                let w = self.weight(v);
                w.first * first * first + 2.0 * w.cross * first * second + w.second * second * second
            })
            .sum())
    }

    /// Objective with `sigma2` at its closed-form minimiser; returns `(value, sigma2)`.
    pub fn profiled_objective(&self, theta: &[f64]) -> Result<(f64, f64)> {
        let r = self.response.fitted(theta, self.x)?;
        let sigma2 = self.profiled_sigma2(&r);
        Ok((self.objective(theta, sigma2)?, sigma2))
    }

    /// `sum(cross e + second d) / sum(second)`; the plain mean of `d` when the
    /// second-moment term carries no weight.
    fn profiled_sigma2(&self, r: &DVector<f64>) -> f64 {
        let n = self.y.len();
        let (mut num, mut den, mut mean) = (0.0, 0.0, 0.0);
        for v in 0..n {
            let w = self.weight(v);
            let d = self.y[v] * self.y[v] - r[v] * r[v];
            num += w.cross * (self.y[v] - r[v]) + w.second * d;
            den += w.second;
            mean += d;
        }
        if den > 0.0 {
            num / den
        } else {
            mean / n as f64
        }
    }

    /// Residuals `L' rho_v` and their Jacobian, with `sigma2` profiled out
    /// (its dependence on `theta` included).
    fn stacked(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.y.len();
        let r = self.response.fitted(theta.as_slice(), self.x)?;
        let jac = self.response.jacobian(theta.as_slice(), self.x)?;
        let k = jac.ncols();
        let sigma2 = self.profiled_sigma2(&r);
        // d sigma2 / d theta
        let mut ds = DVector::zeros(k);
        let mut den = 0.0;
        for v in 0..n {
            let w = self.weight(v);
            den += w.second;
            for j in 0..k {
                ds[j] -= (w.cross + 2.0 * w.second * r[v]) * jac[(v, j)];
            }
        }
        if den > 0.0 {
            ds /= den;
        } else {
            for j in 0..k {
                ds[j] = (0..n).map(|v| -2.0 * r[v] * jac[(v, j)]).sum::<f64>() / n as f64;
            }
        }
        let mut res = DVector::zeros(2 * n);
        let mut jr = DMatrix::zeros(2 * n, k);
        for v in 0..n {
            let (l11, l21, l22) = self.weight(v).cholesky();
            let first = self.y[v] - r[v];
            let second = self.y[v] * self.y[v] - r[v] * r[v] - sigma2;
            res[v] = l11 * first + l21 * second;
            res[n + v] = l22 * second;
            for j in 0..k {
                let d_first = -jac[(v, j)];
                let d_second = -2.0 * r[v] * jac[(v, j)] - ds[j];
                jr[(v, j)] = l11 * d_first + l21 * d_second;
                jr[(n + v, j)] = l22 * d_second;
            }
        }
        Ok((res, jr))
    }
}

/// Minimises the SLS objective from `init`.
pub fn sls_estimate(problem: &SlsProblem<'_>, init: &[f64]) -> Result<SlsEstimate> {
    let k = problem.response.param_dim(problem.x);
    if init.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: init.len(),
        });
    }
    let n = problem.y.len();
    if n <= k + 1 {
        return Err(Error::InsufficientData {
            needed: k + 2,
            got: n,
        });
    }
    let (start, _) = problem.profiled_objective(init)?;
    if !start.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let (theta, _, iterations, converged) =
        levenberg_marquardt(|t| problem.stacked(t), DVector::from_column_slice(init))?;
    let (objective, sigma2) = problem.profiled_objective(theta.as_slice())?;
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            residual: objective,
        });
    }
    Ok(SlsEstimate {
        theta: theta.as_slice().to_vec(),
        sigma2,
        converged,
        iterations,
        objective,
    })
}

/// Inverse covariance of `(e, 2 R e + e^2 - mu2)` at each fitted value of
/// `pilot`, from the error `cumulants`.
pub fn optimal_weights(
    cumulants: &CumulantSet,
    response: Response,
    x: &DMatrix<f64>,
    pilot: &[f64],
) -> Result<Vec<PairWeight>> {
    let (mu2, mu3) = (cumulants.c2(), cumulants.c3());
    let mu4 = cumulants.c4() + 3.0 * mu2 * mu2;
    let det = mu2 * (mu4 - mu2 * mu2) - mu3 * mu3;
    if !(mu2 > 0.0) || !(det > 1e-12 * mu2.powi(3)) {
        return Err(Error::InvalidShape(format!(
            "residual pair covariance is singular (c2 = {mu2}, det = {det})"
        )));
    }
    let r = response.fitted(pilot, x)?;
    Ok(r
        .iter()
        .map(|&rv| {
            let s11 = mu2;
            let s12 = 2.0 * rv * mu2 + mu3;
            let s22 = 4.0 * rv * rv * mu2 + 4.0 * rv * mu3 + mu4 - mu2 * mu2;
            // s11 s22 - s12^2 = det for every rv
            PairWeight {
                first: s22 / det,
                cross: -s12 / det,
                second: s11 / det,
            }
        })
        .collect())
}

/// Sandwich covariance of `(theta, sigma2)` for a fixed `omega > 0`, given the
/// error moments implied by `cumulants` (zero-mean errors).
pub fn sls_asymptotic_covariance(
    response: Response,
    x: &DMatrix<f64>,
    theta: &[f64],
    omega: f64,
    cumulants: &CumulantSet,
) -> Result<DMatrix<f64>> {
    let mu2 = cumulants.c2();
    let mu3 = cumulants.c3();
    let mu4 = cumulants.c4() + 3.0 * mu2 * mu2;
    let r = response.fitted(theta, x)?;
    let jac = response.jacobian(theta, x)?;
    let k = jac.ncols();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = DMatrix::zeros(k + 1, k + 1);
    for v in 0..x.nrows() {
        let rv = r[v];
        let jv = jac.row(v).transpose();
        let jj = &jv * jv.transpose();
        let e_eu = 2.0 * rv * mu2 + mu3;
        let e_uu = 4.0 * rv * rv * mu2 + 4.0 * rv * mu3 + mu4 - mu2 * mu2;
        let e_aa = mu2 + 4.0 * omega * rv * e_eu + 4.0 * omega * omega * rv * rv * e_uu;
        let e_au = e_eu + 2.0 * omega * rv * e_uu;
        let mut a_tt = a.view_mut((0, 0), (k, k));
        a_tt += &jj * (1.0 + 4.0 * omega * rv * rv);
        let mut b_tt = b.view_mut((0, 0), (k, k));
        b_tt += &jj * e_aa;
        for j in 0..k {
            a[(j, k)] += 2.0 * omega * rv * jv[j];
            b[(j, k)] += omega * e_au * jv[j];
        }
        a[(k, k)] += omega;
        b[(k, k)] += omega * omega * e_uu;
    }
    for j in 0..k {
        a[(k, j)] = a[(j, k)];
        b[(k, j)] = b[(j, k)];
    }
    let a_inv = a.try_inverse().ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    Ok(&a_inv * b * &a_inv)
}

/// Weight minimising the summed relative asymptotic variance
/// `sum_j Var_SLS(theta_j) / Var_OLS(theta_j)` over a log grid on
/// `[1e-4, 1e2]`, evaluated at the design `x` and parameter `theta`.
pub fn sls_default_omega(
    cumulants: &CumulantSet,
    response: Response,
    x: &DMatrix<f64>,
    theta: &[f64],
) -> Result<f64> {
    if !(cumulants.c2() > 0.0) {
        return Err(Error::InvalidShape(format!(
            "residual variance must be positive, got {}",
            cumulants.c2()
        )));
    }
    let jac = response.jacobian(theta, x)?;
    let ols = (jac.transpose() * &jac)
        .try_inverse()
        .ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?
        * cumulants.c2();
    let k = jac.ncols();
    let mut best = (f64::INFINITY, OMEGA_MIN);
    for i in 0..OMEGA_GRID {
        let exponent = OMEGA_MIN.log10()
            + (OMEGA_MAX.log10() - OMEGA_MIN.log10()) * i as f64 / (OMEGA_GRID - 1) as f64;
        let omega = 10f64.powf(exponent);
        let cov = match sls_asymptotic_covariance(response, x, theta, omega, cumulants) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let score: f64 = (0..k).map(|j| cov[(j, j)] / ols[(j, j)]).sum();
        if score.is_finite() && score < best.0 {
            best = (score, omega);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::InvalidShape("no admissible omega on the grid".into()));
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::least_squares_fit;

    fn line_data() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(12, 2, |r, c| if c == 0 { 1.0 } else { r as f64 / 11.0 });
        let noise = [0.3, -0.1, 0.4, -0.5, 0.2, 0.0, -0.2, 0.6, -0.3, 0.1, -0.4, 0.25];
        let y = DVector::from_fn(12, |r, _| 1.0 + 2.0 * x[(r, 1)] + noise[r]);
        (x, y)
    }

    #[test]
    fn zero_weight_is_ordinary_least_squares() {
        let (x, y) = line_data();
        let problem = SlsProblem::new(&x, &y, Response::Linear, 0.0).unwrap();
        let est = sls_estimate(&problem, &[0.0, 0.0]).unwrap();
        let ols = least_squares_fit(Response::Linear, &x, &y, None).unwrap();
        for j in 0..2 {
            assert!((est.theta[j] - ols.theta[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn objective_does_not_increase() {
        let (x, y) = line_data();
        let problem = SlsProblem::new(&x, &y, Response::Linear, 0.5).unwrap();
        let init = [0.5, 1.0];
        let est = sls_estimate(&problem, &init).unwrap();
        assert!(est.objective <= problem.profiled_objective(&init).unwrap().0);
    }

    #[test]
    fn profiled_sigma_minimises_objective() {
        let (x, y) = line_data();
        let problem = SlsProblem::new(&x, &y, Response::Linear, 0.7).unwrap();
        let theta = [1.1, 1.9];
        let (best, s2) = problem.profiled_objective(&theta).unwrap();
        for ds in [-0.1, -1e-3, 1e-3, 0.1] {
            assert!(problem.objective(&theta, s2 + ds).unwrap() > best);
        }
    }

    #[test]
    fn degenerate_variance_rejected() {
        let (x, _) = line_data();
        let c = CumulantSet::new(0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            sls_default_omega(&c, Response::Linear, &x, &[1.0, 2.0]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn negative_weight_rejected() {
        let (x, y) = line_data();
        assert!(SlsProblem::new(&x, &y, Response::Linear, -1.0).is_err());
    }

    #[test]
    fn too_few_observations() {
        let x = DMatrix::from_element(3, 2, 1.0);
        let y = DVector::from_element(3, 1.0);
        let problem = SlsProblem::new(&x, &y, Response::Linear, 0.0).unwrap();
        assert!(matches!(
            sls_estimate(&problem, &[0.0, 0.0]),
            Err(Error::InsufficientData { .. })
        ));
    }

    fn exp_data(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        use rand::SeedableRng;
        use rand_distr::{ChiSquared, Distribution as _};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let chi = ChiSquared::new(3.0).unwrap();
        let x = DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |r, _| 2.0 * (0.5 * x[(r, 0)]).exp() + chi.sample(&mut rng) - 3.0);
        (x, y)
    }

    fn chi3() -> CumulantSet {
        CumulantSet::new(6.0, 24.0, 144.0).unwrap()
    }

    #[test]
    fn scalar_weights_match_plain_omega() {
        let (x, y) = exp_data(60, 1);
        let w = vec![PairWeight::scalar(0.3); 60];
        let a = sls_estimate(&SlsProblem::new(&x, &y, Response::Exponential, 0.3).unwrap(), &[2.0, 0.5]).unwrap();
        let b = sls_estimate(
            &SlsProblem::with_weights(&x, &y, Response::Exponential, &w).unwrap(),
            &[2.0, 0.5],
        )
        .unwrap();
        for j in 0..2 {
            assert!((a.theta[j] - b.theta[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_weights_invert_pair_covariance() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let c = chi3();
        let w = optimal_weights(&c, Response::Exponential, &x, &[2.0, 0.5]).unwrap();
        let (mu2, mu3, mu4) = (6.0, 24.0, 144.0 + 108.0);
        for (v, wv) in w.iter().enumerate() {
            let r = 2.0 * (0.5 * x[(v, 0)]).exp();
            let s = nalgebra::Matrix2::new(mu2, 2.0 * r * mu2 + mu3, 2.0 * r * mu2 + mu3, 4.0 * r * r * mu2 + 4.0 * r * mu3 + mu4 - mu2 * mu2);
            let m = nalgebra::Matrix2::new(wv.first, wv.cross, wv.cross, wv.second) * s;
            assert!((m - nalgebra::Matrix2::identity()).amax() < 1e-10);
        }
    }

    #[test]
    fn gaussian_pair_covariance_is_fine_but_boundary_shape_is_rejected() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(optimal_weights(&CumulantSet::new(1.0, 0.0, 0.0).unwrap(), Response::Exponential, &x, &[1.0, 0.1]).is_ok());
        // two-point errors: gamma4 = gamma3^2 - 2
        let c = CumulantSet::new(1.0, 0.0, -2.0).unwrap();
        assert!(matches!(
            optimal_weights(&c, Response::Exponential, &x, &[1.0, 0.1]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn skewed_errors_scalar_weight_does_not_beat_least_squares() {
        let x = DMatrix::from_fn(200, 1, |r, _| r as f64 / 199.0);
        let c = chi3();
        let theta = [2.0, 0.5];
        let omega = sls_default_omega(&c, Response::Exponential, &x, &theta).unwrap();
        assert_eq!(omega, OMEGA_MIN);
    }

    #[test]
    fn weighted_objective_does_not_increase() {
        let (x, y) = exp_data(100, 4);
        let w = optimal_weights(&chi3(), Response::Exponential, &x, &[2.0, 0.5]).unwrap();
        let problem = SlsProblem::with_weights(&x, &y, Response::Exponential, &w).unwrap();
        let init = [1.8, 0.6];
        let est = sls_estimate(&problem, &init).unwrap();
        assert!(est.objective <= problem.profiled_objective(&init).unwrap().0);
    }
}
