//! Stochastic polynomials over a basis family and their matrix of centered
//! correlants `F_{ij} = Psi_{ij} - Psi_i Psi_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{binomial, solve_symmetric, solve_symmetric_matrix};
use crate::moments::InitialMomentVector;

/// Relative determinant threshold below which `F` is declared degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Basis functions of a stochastic polynomial.
///
/// The lag-product ordering is: degree `p` ascending, then the non-decreasing
/// lag tuples `(i_1 <= .. <= i_p)` in lexicographic order, where lag `i`
/// refers to `x[n - i]`. For `N = 2`, `M = 2` this yields
/// `x[n], x[n-1], x[n]^2, x[n]x[n-1], x[n-1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisFamily {
    /// `phi_i(xi) = xi^i`, `i = 1..=degree`.
    Power { degree: usize },
    /// Monomials of lagged samples up to `degree` with memory `memory`.
    LagProducts { degree: usize, memory: usize },
}

impl BasisFamily {
    pub fn power(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("power basis degree must be >= 1".into()));
        }
        Ok(BasisFamily::Power { degree })
    }

    pub fn lag_products(degree: usize, memory: usize) -> Result<Self> {
        if degree == 0 || memory == 0 {
            return Err(Error::InvalidArgument(
                "lag-product basis needs degree >= 1 and memory >= 1".into(),
            ));
        }
        Ok(BasisFamily::LagProducts { degree, memory })
    }

    /// Number of basis functions `S` (the constant is not counted).
    pub fn size(&self) -> usize {
        match *self {
            BasisFamily::Power { degree } => degree,
            BasisFamily::LagProducts { degree, memory } => basis_size(degree, memory),
        }
    }
}

/// `S = sum_{p=1}^{N} C(M + p - 1, p)`, the number of distinct monomials of
/// degree `1..=N` in `M` lagged samples.
pub fn basis_size(degree: usize, memory: usize) -> usize {
    (1..=degree)
        .map(|p| binomial((memory + p - 1) as u64, p as u64) as usize)
        .sum()
}

/// Precomputed lag tuples of a lag-product basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagBasis {
    degree: usize,
    memory: usize,
    tuples: Vec<Vec<usize>>,
}

impl LagBasis {
    pub fn new(degree: usize, memory: usize) -> Result<Self> {
        BasisFamily::lag_products(degree, memory)?;
        let mut tuples = Vec::with_capacity(basis_size(degree, memory));
        for p in 1..=degree {
            let mut current = Vec::with_capacity(p);
            push_tuples(p, 0, memory, &mut current, &mut tuples);
        }
        Ok(Self {
            degree,
            memory,
            tuples,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Lag tuples in basis order.
    pub fn tuples(&self) -> &[Vec<usize>] {
        &self.tuples
    }

    /// Evaluates the basis at time `n` into `out`.
    pub fn eval_into(&self, signal: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
        if n + 1 < self.memory || n >= signal.len() {
            return Err(Error::IndexOutOfWindow {
                index: n,
                memory: self.memory,
            });
        }
        if out.len() != self.tuples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tuples.len(),
                got: out.len(),
            });
        }
        for (slot, tuple) in out.iter_mut().zip(&self.tuples) {
            *slot = tuple.iter().map(|&lag| signal[n - lag]).product();
        }
        Ok(())
    }

    /// Design matrix with one row per full lag window, `n = M-1 .. len-1`.
    pub fn design(&self, signal: &[f64]) -> Result<DMatrix<f64>> {
        if signal.len() < self.memory {
            return Err(Error::SignalTooShort {
                needed: self.memory,
                got: signal.len(),
            });
        }
        let rows = signal.len() + 1 - self.memory;
        let mut design = DMatrix::zeros(rows, self.tuples.len());
        let mut buf = vec![0.0; self.tuples.len()];
        for (r, n) in (self.memory - 1..signal.len()).enumerate() {
            self.eval_into(signal, n, &mut buf)?;
            for (c, v) in buf.iter().enumerate() {
                design[(r, c)] = *v;
            }
        }
        Ok(design)
    }
}

fn push_tuples(
    remaining: usize,
    start: usize,
    memory: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    for lag in start..memory {
        current.push(lag);
        push_tuples(remaining - 1, lag, memory, current, out);
        current.pop();
    }
}

/// Evaluates the lag-product basis of degree `degree`, memory `memory` at time `n`.
pub fn expand_lag_basis(signal: &[f64], degree: usize, memory: usize, n: usize) -> Result<Vec<f64>> {
    let basis = LagBasis::new(degree, memory)?;
    let mut out = vec![0.0; basis.len()];
    basis.eval_into(signal, n, &mut out)?;
    Ok(out)
}

/// Matrix of centered correlants of a basis, with basis means and determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelantMatrix {
    f: DMatrix<f64>,
    psi: DVector<f64>,
    det: f64,
}

impl CorrelantMatrix {
    /// Wraps `F` and `Psi`, rejecting asymmetric or degenerate matrices.
    ///
    /// Degeneracy is scale-aware: `det(F) <= 1e-10 * prod(diag F)`.
    pub fn new(f: DMatrix<f64>, psi: DVector<f64>) -> Result<Self> {
        let s = f.nrows();
        if f.ncols() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                got: f.ncols(),
            });
        }
        if psi.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                got: psi.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite correlant".into()));
        }
        let norm = f.amax().max(f64::MIN_POSITIVE);
        for i in 0..s {
            for j in 0..i {
                if (f[(i, j)] - f[(j, i)]).abs() > 1e-12 * norm {
                    return Err(Error::InvalidArgument(format!(
                        "correlant matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let diag: Vec<f64> = (0..s).map(|i| f[(i, i)]).collect();
        if diag.iter().any(|&d| d <= 0.0) {
            return Err(Error::DegenerateCorrelantMatrix {
                det: f.determinant(),
                tolerance: 0.0,
            });
        }
        // determinant of the correlation-normalised matrix avoids overflow for large S
        let inv_sqrt: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let normalised = DMatrix::from_fn(s, s, |i, j| f[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let rel_det = normalised.determinant();
        let diag_prod: f64 = diag.iter().product();
        let det = rel_det * diag_prod;
        if !(rel_det > DEGENERACY_TOL) {
            return Err(Error::DegenerateCorrelantMatrix {
                det,
                tolerance: DEGENERACY_TOL * diag_prod,
            });
        }
        Ok(Self { f, psi, det })
    }

    /// Power-basis correlants from raw moments: `F_ij = alpha_{i+j} - alpha_i alpha_j`.
    pub fn from_power_moments(degree: usize, moments: &InitialMomentVector) -> Result<Self> {
        let (f, psi) = power_correlants(degree, moments)?;
        Self::new(f, psi)
    }

    /// Empirical correlants of basis values, one observation per row.
    pub fn from_design(design: &DMatrix<f64>) -> Result<Self> {
        let (f, psi) = empirical_correlants(design)?;
        Self::new(f, psi)
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    /// Body volume `det F`.
    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn size(&self) -> usize {
        self.f.nrows()
    }

    /// Solves `F h = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                got: b.len(),
            });
        }
        solve_symmetric(&self.f, b).ok_or(Error::DegenerateCorrelantMatrix {
            det: self.det,
            tolerance: 0.0,
        })
    }

    /// Solves `F H = B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                got: b.nrows(),
            });
        }
        solve_symmetric_matrix(&self.f, b).ok_or(Error::DegenerateCorrelantMatrix {
            det: self.det,
            tolerance: 0.0,
        })
    }

    /// `h^T F h`.
    pub fn quadratic_form(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                got: h.len(),
            });
        }
        let hv = DVector::from_column_slice(h);
        Ok(hv.dot(&(&self.f * &hv)))
    }
}

fn power_correlants(
    degree: usize,
    moments: &InitialMomentVector,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if degree == 0 {
        return Err(Error::InvalidArgument("degree must be >= 1".into()));
    }
    if moments.order() < 2 * degree {
        return Err(Error::OrderUnavailable {
            requested: 2 * degree,
            available: moments.order(),
        });
    }
    let a = |i: usize| moments.get(i).unwrap();
    let f = DMatrix::from_fn(degree, degree, |i, j| {
        let (i, j) = (i + 1, j + 1);
        a(i + j) - a(i) * a(j)
    });
    let psi = DVector::from_fn(degree, |i, _| a(i + 1));
    Ok((f, psi))
}

/// Unchecked empirical `(F, Psi)` of basis values, one observation per row.
pub fn empirical_correlants(design: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let psi = DVector::from_fn(design.ncols(), |j, _| design.column(j).mean());
    let mut centered = design.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-psi[j]);
    }
    let mut f = centered.transpose() * &centered / n as f64;
    // exact symmetry regardless of summation order
    for i in 0..f.nrows() {
        for j in 0..i {
            let v = 0.5 * (f[(i, j)] + f[(j, i)]);
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    Ok((f, psi))
}

/// Where the basis moments come from.
#[derive(Debug, Clone, Copy)]
pub enum MomentSource<'a> {
    /// Analytic raw moments (power basis only).
    Raw(&'a InitialMomentVector),
    /// Independent observations: sample averages of the basis functions.
    Sample(&'a [f64]),
    /// A single signal: time averages over every full lag window.
    Signal(&'a [f64]),
}

/// Builds the matrix of centered correlants of `basis` from `source`.
pub fn build_correlant_matrix(basis: &BasisFamily, source: MomentSource<'_>) -> Result<CorrelantMatrix> {
    match (*basis, source) {
        (BasisFamily::Power { degree }, MomentSource::Raw(alpha)) => {
            CorrelantMatrix::from_power_moments(degree, alpha)
        }
        (BasisFamily::Power { degree }, MomentSource::Sample(x) | MomentSource::Signal(x)) => {
            let design = DMatrix::from_fn(x.len(), degree, |r, c| x[r].powi(c as i32 + 1));
            CorrelantMatrix::from_design(&design)
        }
        (BasisFamily::LagProducts { degree, memory }, MomentSource::Signal(x)) => {
            let design = LagBasis::new(degree, memory)?.design(x)?;
            CorrelantMatrix::from_design(&design)
        }
        (BasisFamily::LagProducts { .. }, _) => Err(Error::InvalidArgument(
            "lag-product bases need a signal to average over".into(),
        )),
    }
}

/// `eta = h0 + sum_i h_i phi_i(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolynomial {
    coefficients: Vec<f64>,
    basis: BasisFamily,
}

impl StochasticPolynomial {
    /// `coefficients = [h0, h1, .., hS]`.
    pub fn new(coefficients: Vec<f64>, basis: BasisFamily) -> Result<Self> {
        if coefficients.len() != basis.size() + 1 {
            return Err(Error::DimensionMismatch {
                expected: basis.size() + 1,
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self {
            coefficients,
            basis,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn basis(&self) -> &BasisFamily {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.size()
    }

    /// Value of the polynomial at given basis-function values.
    pub fn evaluate(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.degree() {
            return Err(Error::DimensionMismatch {
                expected: self.degree(),
                got: phi.len(),
            });
        }
        Ok(self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(phi)
                .map(|(h, p)| h * p)
                .sum::<f64>())
    }
}

/// Variance of the polynomial, `sum_ij h_i h_j F_ij` (the offset carries none).
pub fn polynomial_variance(poly: &StochasticPolynomial, f: &CorrelantMatrix) -> Result<f64> {
    if poly.degree() != f.size() {
        return Err(Error::DimensionMismatch {
            expected: f.size(),
            got: poly.degree(),
        });
    }
    Ok(f.quadratic_form(&poly.coefficients()[1..])?.max(0.0))
}
