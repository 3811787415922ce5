//! Polynomial maximization method.
//!
//! A [`MomentModel`] maps a parameter `theta` to the theoretical basis means
//! `Psi_i(theta)`, their derivatives and the matrix of centered correlants.
//! The optimal polynomial coefficients solve `F(theta) h = dPsi/dtheta`, and
//! the estimate is the root of the stationarity system
//! `sum_i h_ij(theta) (m_i - Psi_i(theta)) = 0`, the maximum point of the
//! stochastic polynomial.
//!
//! Cumulants entering `F` are estimated once and held fixed during the
//! Newton iteration (two-stage, plug-in adaptivity).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{raw_moments_from_cumulants, sample_cumulants, sample_mean, CumulantSet, ShapeClass};
use crate::regression::{damped_newton, least_squares_fit, Response};
use crate::stochpoly::CorrelantMatrix;

/// Newton iteration cap.
pub const MAX_ITERATIONS: usize = 100;
/// Relative tolerance on the estimating-equation residual.
pub const RELATIVE_TOLERANCE: f64 = 1e-10;
/// `|gamma3|` below which a sample counts as symmetric.
pub const SYMMETRY_THRESHOLD: f64 = 0.1;

/// Parametric moment description the PMM estimates against.
pub trait MomentModel {
    /// Number of parameters `K`.
    fn param_dim(&self) -> usize;
    /// Number of basis functions `S`.
    fn basis_size(&self) -> usize;
    /// Theoretical basis means `Psi_i(theta)`.
    fn psi(&self, theta: &[f64]) -> Result<DVector<f64>>;
    /// `dPsi_i / dtheta_j`, an `S x K` matrix.
    fn dpsi(&self, theta: &[f64]) -> Result<DMatrix<f64>>;
    /// Matrix of centered correlants at `theta`.
    fn correlants(&self, theta: &[f64]) -> Result<CorrelantMatrix>;
}

/// Largest relative discrepancy between `dpsi` and central differences of `psi`.
pub fn check_derivatives<M: MomentModel + ?Sized>(model: &M, theta: &[f64]) -> Result<f64> {
    let analytic = model.dpsi(theta)?;
    let mut worst = 0.0_f64;
    for j in 0..model.param_dim() {
        let h = 1e-5 * (1.0 + theta[j].abs());
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += h;
        tm[j] -= h;
        let fd = (model.psi(&tp)? - model.psi(&tm)?) / (2.0 * h);
        for i in 0..model.basis_size() {
            let denom = analytic[(i, j)].abs().max(fd[i].abs()).max(1e-12);
            worst = worst.max((analytic[(i, j)] - fd[i]).abs() / denom);
        }
    }
    Ok(worst)
}

/// Location model `xi = theta + eps` with fixed noise cumulants and power basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationModel {
    degree: usize,
    noise: CumulantSet,
}

impl LocationModel {
    /// Needs noise cumulants up to order `2 * degree`.
    pub fn new(degree: usize, noise: CumulantSet) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("degree must be >= 1".into()));
        }
        if 2 * degree > noise.order() {
            return Err(Error::OrderUnavailable {
                requested: 2 * degree,
                available: noise.order(),
            });
        }
        Ok(Self { degree, noise })
    }

    pub fn noise(&self) -> &CumulantSet {
        &self.noise
    }
}

impl MomentModel for LocationModel {
    fn param_dim(&self) -> usize {
        1
    }

    fn basis_size(&self) -> usize {
        self.degree
    }

    fn psi(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let alpha = raw_moments_from_cumulants(&self.noise, theta[0], self.degree)?;
        Ok(DVector::from_column_slice(alpha.as_slice()))
    }

    fn dpsi(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let psi = self.psi(theta)?;
        Ok(DMatrix::from_fn(self.degree, 1, |i, _| {
            let lower = if i == 0 { 1.0 } else { psi[i - 1] };
            (i + 1) as f64 * lower
        }))
    }

    fn correlants(&self, theta: &[f64]) -> Result<CorrelantMatrix> {
        let alpha = raw_moments_from_cumulants(&self.noise, theta[0], 2 * self.degree)?;
        CorrelantMatrix::from_power_moments(self.degree, &alpha)
    }
}

/// PMM point estimate with its optimal coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PmmEstimate {
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Predicted asymptotic variance ratio against the linear estimator.
    pub g_coefficient: f64,
    /// Optimal coefficients `h*` at the estimate (`S x K`).
    pub coefficients: DMatrix<f64>,
    /// Estimating-equation residual `|G(theta_hat)|_inf`.
    pub residual: f64,
}

/// Columns solve `F(theta) h = dPsi/dtheta_j`.
pub fn optimal_coefficients<M: MomentModel + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_theta(model, theta)?;
    let f = model.correlants(theta)?;
    f.solve_matrix(&model.dpsi(theta)?)
}

fn check_theta<M: MomentModel + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Predicted variance ratio of the degree-`S` estimator against the estimator
/// that uses only the leading `K` basis functions.
///
/// Both use the information matrix `I = B^T F^{-1} B`; the ratio is the mean of
/// the diagonal ratios of the inverse information matrices. `NaN` when the
/// truncated model carries no information.
pub fn predicted_variance_ratio<M: MomentModel + ?Sized>(model: &M, theta: &[f64]) -> Result<f64> {
    let k = model.param_dim();
    let f = model.correlants(theta)?;
    let b = model.dpsi(theta)?;
    let full_info = b.transpose() * f.solve_matrix(&b)?;
    if model.basis_size() <= k {
        return Ok(1.0);
    }
    let f_ref = f.f().view((0, 0), (k, k)).into_owned();
    let b_ref = b.view((0, 0), (k, k)).into_owned();
    let ref_info = match f_ref.clone().lu().solve(&b_ref) {
        Some(sol) => b_ref.transpose() * sol,
        None => return Ok(f64::NAN),
    };
    let (Some(full_inv), Some(ref_inv)) = (full_info.try_inverse(), ref_info.try_inverse()) else {
        return Ok(f64::NAN);
    };
    Ok((0..k).map(|j| full_inv[(j, j)] / ref_inv[(j, j)]).sum::<f64>() / k as f64)
}

/// Solves the PMM stationarity system from empirical basis averages.
pub fn pmm_estimate<M: MomentModel + ?Sized>(
    model: &M,
    sample_means: &[f64],
    init: &[f64],
) -> Result<PmmEstimate> {
    check_theta(model, init)?;
    if sample_means.len() != model.basis_size() {
        return Err(Error::DimensionMismatch {
            expected: model.basis_size(),
            got: sample_means.len(),
        });
    }
    let m = DVector::from_column_slice(sample_means);
    let root = damped_newton(
        |theta| {
            let (g, scale) = stationarity(model, &m, theta.as_slice())?;
            Ok((g, scale))
        },
        DVector::from_column_slice(init),
        RELATIVE_TOLERANCE,
        MAX_ITERATIONS,
    )?;
    let theta = root.x.as_slice().to_vec();
    Ok(PmmEstimate {
        g_coefficient: predicted_variance_ratio(model, &theta)?,
        coefficients: optimal_coefficients(model, &theta)?,
        theta_hat: theta,
        iterations: root.iterations,
        converged: true,
        residual: root.residual,
    })
}

/// `G_j(theta) = sum_i h*_ij(theta) (m_i - Psi_i(theta))` and its magnitude scale.
pub fn stationarity<M: MomentModel + ?Sized>(
    model: &M,
    sample_means: &DVector<f64>,
    theta: &[f64],
) -> Result<(DVector<f64>, f64)> {
    let h = optimal_coefficients(model, theta)?;
    let psi = model.psi(theta)?;
    let diff = sample_means - &psi;
    let g = h.transpose() * diff;
    let mut scale = 0.0_f64;
    for j in 0..h.ncols() {
        let s: f64 = (0..h.nrows())
            .map(|i| h[(i, j)].abs() * (sample_means[i].abs() + psi[i].abs()))
            .sum();
        scale = scale.max(s);
    }
    Ok((g, scale.max(f64::MIN_POSITIVE)))
}

/// `g2 = 1 - gamma3^2 / (2 + gamma4)`.
pub fn variance_reduction_g2(gamma3: f64, gamma4: f64) -> Result<f64> {
    if !gamma3.is_finite() || !gamma4.is_finite() {
        return Err(Error::InvalidShape("non-finite shape coefficients".into()));
    }
    if 2.0 + gamma4 <= 0.0 {
        return Err(Error::InvalidShape(format!("2 + gamma4 = {} <= 0", 2.0 + gamma4)));
    }
    if gamma4 < gamma3 * gamma3 - 2.0 - 1e-12 {
        return Err(Error::InvalidShape(format!(
            "gamma4 = {gamma4} violates gamma4 >= gamma3^2 - 2"
        )));
    }
    Ok(1.0 - gamma3 * gamma3 / (2.0 + gamma4))
}

/// Predicted PMM3 ratio for a symmetric (excess-class) distribution, computed
/// from the degree-3 correlant system with odd cumulants zeroed.
pub fn variance_reduction_g3(cumulants: &CumulantSet) -> Result<f64> {
    let symmetric = cumulants.perforate(ShapeClass::Excess)?;
    let model = LocationModel::new(3, symmetric)?;
    predicted_variance_ratio(&model, &[0.0])
}

fn centered_power_means(sample: &[f64], center: f64, degree: usize) -> Vec<f64> {
    let mut means = vec![0.0; degree];
    for &x in sample {
        let d = x - center;
        let mut p = 1.0;
        for m in means.iter_mut() {
            p *= d;
            *m += p;
        }
    }
    let n = sample.len() as f64;
    means.iter_mut().for_each(|m| *m /= n);
    means
}

fn location_estimate(sample: &[f64], degree: usize, noise: CumulantSet) -> Result<PmmEstimate> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: sample.len(),
        });
    }
    // shift to the sample mean for conditioning; the estimator is translation equivariant
    let center = sample_mean(sample);
    let model = LocationModel::new(degree, noise)?;
    let means = centered_power_means(sample, center, degree);
    let mut est = pmm_estimate(&model, &means, &[0.0])?;
    est.theta_hat[0] += center;
    Ok(est)
}

/// PMM2 location estimate with the given noise cumulants (order >= 4).
pub fn pmm2_estimate_location(sample: &[f64], cumulants: &CumulantSet) -> Result<PmmEstimate> {
    let noise = CumulantSet::new(cumulants.c2(), cumulants.c3(), cumulants.c4())?;
    let mut est = location_estimate(sample, 2, noise)?;
    est.g_coefficient = variance_reduction_g2(noise.gamma3(), noise.gamma4())?;
    Ok(est)
}

/// PMM2 location estimate with cumulants estimated from the sample itself.
///
/// The estimated variance makes the second moment equation hold at the
/// sample mean, so the result stays within `O(1/N)` of the mean and carries
/// no variance gain; use known cumulants for that.
pub fn pmm2_location_adaptive(sample: &[f64]) -> Result<PmmEstimate> {
    let cumulants = sample_cumulants(sample, 4)?;
    pmm2_estimate_location(sample, &cumulants)
}

/// PMM3 location estimate for symmetric platykurtic noise (cumulants to order 6).
pub fn pmm3_estimate_location(sample: &[f64], cumulants: &CumulantSet) -> Result<PmmEstimate> {
    if cumulants.gamma3().abs() >= SYMMETRY_THRESHOLD {
        return Err(Error::AsymmetryDetected {
            gamma3: cumulants.gamma3(),
        });
    }
    if cumulants.order() < 6 {
        return Err(Error::OrderUnavailable {
            requested: 6,
            available: cumulants.order(),
        });
    }
    let symmetric = cumulants.perforate(ShapeClass::Excess)?;
    location_estimate(sample, 3, symmetric)
}

/// Estimation method chosen by [`pmm_dispatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MethodChoice {
    Ols,
    Pmm2,
    Pmm3,
}

impl std::fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodChoice::Ols => "OLS",
            MethodChoice::Pmm2 => "PMM2",
            MethodChoice::Pmm3 => "PMM3",
        })
    }
}

/// Thresholds for [`pmm_dispatch`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchConfig {
    /// Minimum predicted relative variance gain.
    pub delta: f64,
    /// `|gamma3|` below this counts as symmetric.
    pub symmetry_threshold: f64,
    /// `gamma4` below `-platykurtic_margin` counts as platykurtic.
    pub platykurtic_margin: f64,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            delta: 0.02,
            symmetry_threshold: SYMMETRY_THRESHOLD,
            platykurtic_margin: 0.1,
        }
    }
}

/// Dispatch outcome with the shape estimates behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    pub choice: MethodChoice,
    pub gamma3: f64,
    pub gamma4: f64,
    pub g2: f64,
    pub g3: Option<f64>,
}

/// Minimum sample length accepted by [`pmm_dispatch`].
pub const DISPATCH_MIN_LEN: usize = 30;

/// Chooses between OLS, PMM2 and PMM3 from sample shape estimates.
pub fn pmm_dispatch(sample: &[f64], config: &DispatchConfig) -> Result<DispatchDecision> {
    if sample.len() < DISPATCH_MIN_LEN {
        return Err(Error::InsufficientData {
            needed: DISPATCH_MIN_LEN,
            got: sample.len(),
        });
    }
    let c = sample_cumulants(sample, 6)?;
    let (gamma3, gamma4) = (c.gamma3(), c.gamma4());
    let g2 = variance_reduction_g2(gamma3, gamma4).unwrap_or(1.0);
    let mut g3 = None;
    let choice = if g2 < 1.0 - config.delta {
        MethodChoice::Pmm2
    } else if gamma3.abs() < config.symmetry_threshold && gamma4 < -config.platykurtic_margin {
        g3 = variance_reduction_g3(&c).ok().filter(|g| g.is_finite());
        match g3 {
            Some(g) if g < 1.0 - config.delta => MethodChoice::Pmm3,
            _ => MethodChoice::Ols,
        }
    } else {
        MethodChoice::Ols
    };
    Ok(DispatchDecision {
        choice,
        gamma3,
        gamma4,
        g2,
        g3,
    })
}

/// Stacked PMM2 regression estimate.
///
/// Starts from the least-squares fit (`init` required for nonlinear
/// responses), takes residual cumulants from `shape` or estimates them, then
/// solves `sum_v J_vj [A e_v + B (e_v^2 - c2)] = 0` with
/// `(A, B) = (c4 + 2 c2^2, -c3)`, the solution of the residual location
/// system `F2 h = (1, 0)` up to scale. Symmetric residuals give `B = 0`: the
/// least-squares fit is returned with `g2 = 1`.
pub fn pmm2_regression(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    response: Response,
    init: Option<&[f64]>,
    shape: Option<&CumulantSet>,
) -> Result<PmmEstimate> {
    let fit = least_squares_fit(response, x, y, init)?;
    let resid = fit.residuals.as_slice();
    let c = match shape {
        Some(c) => CumulantSet::new(c.c2(), c.c3(), c.c4())?,
        None => sample_cumulants(resid, 4)?,
    };
    let (c2, c3, c4) = (c.c2(), c.c3(), c.c4());
    let g2 = variance_reduction_g2(c.gamma3(), c.gamma4())?;
    let det = c2 * (c4 + 2.0 * c2 * c2) - c3 * c3;
    let (a, b) = (c4 + 2.0 * c2 * c2, -c3);
    let coefficients = DMatrix::from_column_slice(2, 1, &[a / det, b / det]);
    if b == 0.0 {
        return Ok(PmmEstimate {
            theta_hat: fit.theta.as_slice().to_vec(),
            iterations: fit.iterations,
            converged: fit.converged,
            g_coefficient: g2,
            coefficients,
            residual: 0.0,
        });
    }
    let root = pmm2_scoring(x, y, response, fit.theta.clone(), a, b, c2)?;
    Ok(PmmEstimate {
        theta_hat: root.0.as_slice().to_vec(),
        iterations: root.1,
        converged: true,
        g_coefficient: g2,
        coefficients,
        residual: root.2,
    })
}

/// Fisher scoring for `sum_v J_v [a e_v + b (e_v^2 - c2)] = 0`: steps use the
/// expected derivative `a J'J`, and halving is driven by the normalised score
/// `g' (J'J)^-1 g`. The raw residual norm is a poor merit function here
/// because it also vanishes wherever the response flattens out
/// (e.g. an exponential rate running off to minus infinity).
fn pmm2_scoring(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    response: Response,
    init: DVector<f64>,
    a: f64,
    b: f64,
    c2: f64,
) -> Result<(DVector<f64>, usize, f64)> {
    let eval = |theta: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let e = y - response.fitted(theta.as_slice(), x)?;
        let jac = response.jacobian(theta.as_slice(), x)?;
        let u = e.map(|ev| a * ev + b * (ev * ev - c2));
        let g = jac.transpose() * u;
        let info = (jac.transpose() * &jac) * a;
        let step = info.clone().lu().solve(&g).ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?;
        let merit = g.dot(&step);
        if !merit.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        Ok((step, merit.abs()))
    };
    let mut theta = init;
    let (mut step, mut merit) = eval(&theta)?;
    for iter in 0..MAX_ITERATIONS {
        if step.amax() <= RELATIVE_TOLERANCE * (1.0 + theta.amax()) {
            return Ok((theta, iter, merit));
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=20 {
            let candidate = &theta + &step * t;
            if let Ok((s_new, m_new)) = eval(&candidate) {
                if m_new < merit {
                    theta = candidate;
                    step = s_new;
                    merit = m_new;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: merit,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: merit,
    })
}
