//! Second-order discrete Volterra models.
//!
//! `y[n] = h0 + sum_i h1[i] x[n-i] + sum_ij h2[i,j] x[n-i] x[n-j]`
//!
//! With `M = max(M1, M2)` the model is a stochastic polynomial over the
//! lag-product basis of degree two (see [`crate::stochpoly::LagBasis`]). The
//! flat coefficient vector is `[h0, linear terms, quadratic terms]` in basis
//! order; a quadratic pair `(i, j)` with `i < j` carries `2 h2[i,j]` and the
//! diagonal carries `h2[i,i]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_symmetric, symmetric_condition};
use crate::moments::{sample_cumulants, CumulantSet};
use crate::stochpoly::{basis_size, empirical_correlants, CorrelantMatrix, LagBasis};

/// Condition estimate above which an unregularised Gram matrix counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Kernels of a second-order Volterra model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraKernels {
    h0: f64,
    h1: Vec<f64>,
    /// Row-major symmetric `m2 x m2` matrix.
    h2: Vec<f64>,
    m2: usize,
}

impl VolterraKernels {
    /// `h2` is row-major `m2 x m2` and must be symmetric.
    pub fn new(h0: f64, h1: Vec<f64>, h2: Vec<f64>, m2: usize) -> Result<Self> {
        if h2.len() != m2 * m2 {
            return Err(Error::LengthMismatch {
                expected: m2 * m2,
                got: h2.len(),
            });
        }
        if h1.is_empty() && m2 == 0 {
            return Err(Error::InvalidArgument("kernels need memory >= 1".into()));
        }
        if !h0.is_finite() || h1.iter().chain(&h2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel entries must be finite".into()));
        }
        let norm = h2.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..m2 {
            for j in 0..i {
                if (h2[i * m2 + j] - h2[j * m2 + i]).abs() > 1e-12 * norm {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic kernel not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { h0, h1, h2, m2 })
    }

    /// Builds kernels from a square matrix, symmetrising it first.
    pub fn from_matrix(h0: f64, h1: Vec<f64>, h2: &DMatrix<f64>) -> Result<Self> {
        let m2 = h2.nrows();
        if h2.ncols() != m2 {
            return Err(Error::DimensionMismatch {
                expected: m2,
                got: h2.ncols(),
            });
        }
        let sym = DMatrix::from_fn(m2, m2, |i, j| 0.5 * (h2[(i, j)] + h2[(j, i)]));
        let flat: Vec<f64> = (0..m2 * m2).map(|k| sym[(k / m2, k % m2)]).collect();
        Self::new(h0, h1, flat, m2)
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn h1(&self) -> &[f64] {
        &self.h1
    }

    pub fn h2(&self, i: usize, j: usize) -> f64 {
        self.h2[i * self.m2 + j]
    }

    pub fn h2_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m2, self.m2, &self.h2)
    }

    pub fn m1(&self) -> usize {
        self.h1.len()
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    /// `M = max(M1, M2)`.
    pub fn memory(&self) -> usize {
        self.m1().max(self.m2)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.m2).all(|i| (0..i).all(|j| self.h2(i, j) == self.h2(j, i)))
    }
}

/// Output for `n = M-1 .. len-1`; earlier samples have no full lag window.
pub fn volterra_predict(kernels: &VolterraKernels, x: &[f64]) -> Result<Vec<f64>> {
    let m = kernels.memory();
    if x.len() < m {
        return Err(Error::SignalTooShort {
            needed: m,
            got: x.len(),
        });
    }
    let out = (m - 1..x.len())
        .map(|n| {
            let mut y = kernels.h0;
            for (i, h) in kernels.h1.iter().enumerate() {
                y += h * x[n - i];
            }
            for i in 0..kernels.m2 {
                for j in 0..kernels.m2 {
                    y += kernels.h2(i, j) * x[n - i] * x[n - j];
                }
            }
            y
        })
        .collect();
    Ok(out)
}

/// Flattens kernels into `[h0, linear, quadratic]` over the degree-two lag basis.
pub fn kernels_to_coefficients(kernels: &VolterraKernels) -> Vec<f64> {
    let m = kernels.memory();
    let basis = LagBasis::new(2, m).expect("memory >= 1");
    let mut out = Vec::with_capacity(1 + basis.len());
    out.push(kernels.h0);
    for tuple in basis.tuples() {
        let v = match tuple.as_slice() {
            [i] => kernels.h1.get(*i).copied().unwrap_or(0.0),
            [i, j] if *j < kernels.m2 => {
                if i == j {
                    kernels.h2(*i, *j)
                } else {
                    2.0 * kernels.h2(*i, *j)
                }
            }
            _ => 0.0,
        };
        out.push(v);
    }
    out
}

/// Inverse of [`kernels_to_coefficients`] for memory depths `m1`, `m2`.
///
/// Coefficients outside the declared depths must be zero.
pub fn coefficients_to_kernels(coefficients: &[f64], m1: usize, m2: usize) -> Result<VolterraKernels> {
    let m = m1.max(m2);
    if m == 0 {
        return Err(Error::InvalidArgument("memory must be >= 1".into()));
    }
    let expected = 1 + basis_size(2, m);
    if coefficients.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: coefficients.len(),
        });
    }
    let basis = LagBasis::new(2, m)?;
    let mut h1 = vec![0.0; m1];
    let mut h2 = vec![0.0; m2 * m2];
    for (tuple, &c) in basis.tuples().iter().zip(&coefficients[1..]) {
        match tuple.as_slice() {
            [i] if *i < m1 => h1[*i] = c,
            [i, j] if *j < m2 => {
                if i == j {
                    h2[i * m2 + j] = c;
                } else {
                    h2[i * m2 + j] = c / 2.0;
                    h2[j * m2 + i] = c / 2.0;
                }
            }
            _ if c != 0.0 => {
                return Err(Error::InvalidArgument(format!(
                    "non-zero coefficient for lag tuple {tuple:?} outside memory ({m1}, {m2})"
                )))
            }
            _ => {}
        }
    }
    VolterraKernels::new(coefficients[0], h1, h2, m2)
}

/// Prediction through the flat coefficient form.
pub fn predict_flat(coefficients: &[f64], memory: usize, x: &[f64]) -> Result<Vec<f64>> {
    let basis = LagBasis::new(2, memory)?;
    if coefficients.len() != 1 + basis.len() {
        return Err(Error::LengthMismatch {
            expected: 1 + basis.len(),
            got: coefficients.len(),
        });
    }
    if x.len() < memory {
        return Err(Error::SignalTooShort {
            needed: memory,
            got: x.len(),
        });
    }
    let mut buf = vec![0.0; basis.len()];
    (memory - 1..x.len())
        .map(|n| {
            basis.eval_into(x, n, &mut buf)?;
            Ok(coefficients[0]
                + coefficients[1..]
                    .iter()
                    .zip(&buf)
                    .map(|(c, p)| c * p)
                    .sum::<f64>())
        })
        .collect()
}

/// Kernel adaptation criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationMethod {
    /// Normal equations `C_x h = r_yx` of the flattened basis.
    Mmse,
    /// Centered correlant system plus a PMM2 refinement for skewed errors.
    Moment,
}

/// Adapted kernels and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub kernels: VolterraKernels,
    /// Mean squared prediction error over the usable samples.
    pub residual_mse: f64,
    /// Condition estimate of the solved symmetric system.
    pub condition: f64,
    pub method: AdaptationMethod,
    /// `|A h - r|_inf / |r|_inf` of the linear system behind the solution.
    pub normal_residual: f64,
    /// Error cumulants used by the moment refinement, if it ran.
    pub shape: Option<CumulantSet>,
}

struct Layout {
    memory: usize,
    m1: usize,
    m2: usize,
    /// Basis columns (in `LagBasis` order) that are inside the memory depths.
    active: Vec<usize>,
    flat_len: usize,
}

impl Layout {
    fn new(m1: usize, m2: usize) -> Result<Self> {
        let memory = m1.max(m2);
        if memory == 0 {
            return Err(Error::InvalidArgument("memory must be >= 1".into()));
        }
        let basis = LagBasis::new(2, memory)?;
        let active = basis
            .tuples()
            .iter()
            .enumerate()
            .filter(|(_, t)| match t.as_slice() {
                [i] => *i < m1,
                [_, j] => *j < m2,
                _ => false,
            })
            .map(|(k, _)| k)
            .collect();
        Ok(Self {
            memory,
            m1,
            m2,
            active,
            flat_len: 1 + basis.len(),
        })
    }

    fn design(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let full = LagBasis::new(2, self.memory)?.design(x)?;
        Ok(full.select_columns(&self.active))
    }

    fn kernels(&self, h0: f64, active_coeffs: &[f64]) -> Result<VolterraKernels> {
        let mut flat = vec![0.0; self.flat_len];
        flat[0] = h0;
        for (&k, &c) in self.active.iter().zip(active_coeffs) {
            flat[1 + k] = c;
        }
        coefficients_to_kernels(&flat, self.m1, self.m2)
    }
}

fn aligned<'a>(x: &[f64], y: &'a [f64], layout: &Layout) -> Result<&'a [f64]> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let rows = x.len().saturating_sub(layout.memory - 1);
    let params = 1 + layout.active.len();
    if rows <= params {
        return Err(Error::InsufficientData {
            needed: params + layout.memory,
            got: x.len(),
        });
    }
    Ok(&y[layout.memory - 1..])
}

fn residual_mse(design: &DMatrix<f64>, target: &[f64], h0: f64, h: &DVector<f64>) -> f64 {
    let fit = design * h;
    target
        .iter()
        .zip(fit.iter())
        .map(|(t, f)| (t - h0 - f).powi(2))
        .sum::<f64>()
        / target.len() as f64
}

/// Block least-squares adaptation through the normal equations of the
/// flattened basis (constant included). `ridge` adds `lambda I` to the
/// non-constant part of the Gram matrix.
pub fn mmse_adapt(x: &[f64], y: &[f64], m1: usize, m2: usize, ridge: f64) -> Result<AdaptationReport> {
    check_ridge(ridge)?;
    let layout = Layout::new(m1, m2)?;
    let target = aligned(x, y, &layout)?;
    let basis = layout.design(x)?;
    let rows = basis.nrows();
    let p = basis.ncols() + 1;
    let mut phi = DMatrix::from_element(rows, p, 1.0);
    phi.view_mut((0, 1), (rows, p - 1)).copy_from(&basis);
    let t = DVector::from_column_slice(target);
    let mut gram = phi.transpose() * &phi / rows as f64;
    let cross = phi.transpose() * &t / rows as f64;
    for d in 1..p {
        gram[(d, d)] += ridge;
    }
    let condition = symmetric_condition(&gram);
    if ridge == 0.0 && !(condition < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let h = solve_symmetric(&gram, &cross).ok_or(Error::SingularSystem { condition })?;
    let normal_residual = (&gram * &h - &cross).amax() / cross.amax().max(f64::MIN_POSITIVE);
    let coeffs = h.rows(1, p - 1).into_owned();
    Ok(AdaptationReport {
        kernels: layout.kernels(h[0], coeffs.as_slice())?,
        residual_mse: residual_mse(&basis, target, h[0], &coeffs),
        condition,
        method: AdaptationMethod::Mmse,
        normal_residual,
        shape: None,
    })
}

/// Moment-based adaptation.
///
/// Stage one solves `F h = b` with `F` the centered correlant matrix of the
/// flattened basis and `b` the centered cross-correlant vector; the offset is
/// recovered from the means. Stage two, run when the error class `shape` is
/// skewed (`c3 != 0`), replaces the L2 criterion by the PMM2 estimating
/// equations `sum_n phi_n [A e_n + B (e_n^2 - c2)] = 0` with
/// `(A, B) = (c4 + 2 c2^2, -c3)`. When `shape` is `None` the error cumulants
/// are estimated from the stage-one residuals.
///
/// Sample cumulants can leave the stage-two equations without a root near the
/// stage-one solution; the stage-one kernels are then returned with
/// `method == AdaptationMethod::Mmse`.
pub fn moment_adapt(
    x: &[f64],
    y: &[f64],
    m1: usize,
    m2: usize,
    shape: Option<&CumulantSet>,
    ridge: f64,
) -> Result<AdaptationReport> {
    check_ridge(ridge)?;
    let layout = Layout::new(m1, m2)?;
    let target = aligned(x, y, &layout)?;
    let basis = layout.design(x)?;
    let rows = basis.nrows();
    let s = basis.ncols();

    let (mut f, psi) = if ridge == 0.0 {
        let f = CorrelantMatrix::from_design(&basis)?;
        (f.f().clone(), f.psi().clone())
    } else {
        empirical_correlants(&basis)?
    };
    let y_mean = target.iter().sum::<f64>() / rows as f64;
    let b = DVector::from_fn(s, |i, _| {
        (0..rows)
            .map(|n| (basis[(n, i)] - psi[i]) * (target[n] - y_mean))
            .sum::<f64>()
            / rows as f64
    });
    for d in 0..s {
        f[(d, d)] += ridge;
    }
    let condition = symmetric_condition(&f);
    let h = solve_symmetric(&f, &b).ok_or(Error::DegenerateCorrelantMatrix {
        det: f.determinant(),
        tolerance: 0.0,
    })?;
    let normal_residual = (&f * &h - &b).amax() / b.amax().max(f64::MIN_POSITIVE);
    let h0 = y_mean - psi.dot(&h);

    let residuals: Vec<f64> = {
        let fit = &basis * &h;
        target.iter().zip(fit.iter()).map(|(t, v)| t - h0 - v).collect()
    };
    let shape = match shape {
        Some(c) => *c,
        None => sample_cumulants(&residuals, 4)?,
    };
    let report = |h0: f64, h: &DVector<f64>, normal_residual: f64| -> Result<AdaptationReport> {
        Ok(AdaptationReport {
            kernels: layout.kernels(h0, h.as_slice())?,
            residual_mse: residual_mse(&basis, target, h0, h),
            condition,
            method: AdaptationMethod::Moment,
            normal_residual,
            shape: Some(shape),
        })
    };
    if shape.c3() == 0.0 {
        return report(h0, &h, normal_residual);
    }

    // stage two: PMM2 equations over (h0, h), Fisher scoring from the stage-one
    // solution. The expected derivative a * Phi'Phi is constant, so it is
    // factored once; halving is driven by the normalised score g' info^-1 g.
    let (c2, c3, c4) = (shape.c2(), shape.c3(), shape.c4());
    let (a, bq) = (c4 + 2.0 * c2 * c2, -c3);
    let p = s + 1;
    let mut phi = DMatrix::from_element(rows, p, 1.0);
    phi.view_mut((0, 1), (rows, s)).copy_from(&basis);
    let t = DVector::from_column_slice(target);
    let mut info = phi.transpose() * &phi * a;
    for d in 1..p {
        info[(d, d)] += a * rows as f64 * ridge;
    }
    let info = info.cholesky().ok_or(Error::DegenerateCorrelantMatrix {
        det: f.determinant(),
        tolerance: 0.0,
    })?;
    let equations = |theta: &DVector<f64>| -> (DVector<f64>, DVector<f64>, f64, f64) {
        let e = &t - &phi * theta;
        let w = e.map(|ev| a * ev + bq * (ev * ev - c2));
        let mut g = phi.transpose() * &w;
        for d in 1..p {
            g[d] -= a * rows as f64 * ridge * theta[d];
        }
        let mag = phi.abs().transpose() * e.map(|ev| a.abs() * ev.abs() + bq.abs() * (ev * ev + c2));
        let step = info.solve(&g);
        let merit = g.dot(&step).abs();
        (g, step, merit, mag.amax().max(f64::MIN_POSITIVE))
    };
    let mut theta = DVector::from_fn(p, |i, _| if i == 0 { h0 } else { h[i - 1] });
    let (mut g, mut step, mut merit, mut scale) = equations(&theta);
    let mut converged = false;
    for _ in 0..crate::pmm::MAX_ITERATIONS {
        if g.amax() <= crate::pmm::RELATIVE_TOLERANCE * scale
            || step.amax() <= crate::pmm::RELATIVE_TOLERANCE * (1.0 + theta.amax())
        {
            converged = true;
            break;
        }
        let mut t_step = 1.0;
        let mut improved = false;
        for _ in 0..=20 {
            let candidate = &theta + &step * t_step;
            let (g_new, step_new, m_new, s_new) = equations(&candidate);
            if m_new < merit {
                theta = candidate;
                g = g_new;
                step = step_new;
                merit = m_new;
                scale = s_new;
                improved = true;
                break;
            }
            t_step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !converged {
        let mut fallback = report(h0, &h, normal_residual)?;
        fallback.method = AdaptationMethod::Mmse;
        return Ok(fallback);
    }
    let coeffs = theta.rows(1, s).into_owned();
    report(theta[0], &coeffs, g.amax() / scale)
}

fn check_ridge(ridge: f64) -> Result<()> {
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn signal(len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| ((n as f64) * 0.731).sin() + 0.5 * ((n as f64) * 2.17).cos())
            .collect()
    }

    #[test]
    fn constant_kernel() {
        let k = VolterraKernels::new(1.5, vec![0.0], vec![0.0], 1).unwrap();
        assert!(volterra_predict(&k, &signal(5)).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn identity_kernel() {
        let k = VolterraKernels::new(0.0, vec![1.0], vec![], 0).unwrap();
        let x = signal(6);
        assert_eq!(volterra_predict(&k, &x).unwrap(), x);
    }

    #[test]
    fn squaring_kernel() {
        let k = VolterraKernels::new(0.0, vec![0.0], vec![1.0], 1).unwrap();
        let x = signal(6);
        let y = volterra_predict(&k, &x).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert_eq!(*a, b * b);
        }
    }

    #[test]
    fn short_signal_rejected() {
        let k = VolterraKernels::new(0.0, vec![1.0, 1.0, 1.0], vec![], 0).unwrap();
        assert!(matches!(
            volterra_predict(&k, &[1.0, 2.0]),
            Err(Error::SignalTooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn flat_length_for_memory_three() {
        let k = VolterraKernels::new(0.0, vec![0.0; 3], vec![0.0; 9], 3).unwrap();
        assert_eq!(kernels_to_coefficients(&k).len(), 10);
        assert!(matches!(
            coefficients_to_kernels(&[0.0; 9], 3, 3),
            Err(Error::LengthMismatch { expected: 10, got: 9 })
        ));
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        assert!(VolterraKernels::new(0.0, vec![], vec![1.0, 2.0, 3.0, 4.0], 2).is_err());
    }

    #[test]
    fn linear_plant_recovered() {
        let x = signal(200);
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let rep = mmse_adapt(&x, &y, 2, 2, 0.0).unwrap();
        assert_relative_eq!(rep.kernels.h1()[0], 0.5, epsilon = 1e-9);
        assert!(rep.kernels.h1()[1].abs() < 1e-9);
        assert!(rep.kernels.h2_matrix().amax() < 1e-9);
        assert!(rep.residual_mse < 1e-18);
    }

    #[test]
    fn rank_deficient_basis() {
        let x = vec![1.0; 50];
        let y = vec![2.0; 50];
        assert!(matches!(
            mmse_adapt(&x, &y, 2, 2, 0.0),
            Err(Error::SingularSystem { .. })
        ));
        assert!(matches!(
            moment_adapt(&x, &y, 2, 2, None, 0.0),
            Err(Error::DegenerateCorrelantMatrix { .. })
        ));
        assert!(mmse_adapt(&x, &y, 2, 2, 1e-3).is_ok());
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            mmse_adapt(&signal(20), &signal(19), 1, 1, 0.0),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
