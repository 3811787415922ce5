//! Sample and analytic cumulants up to order six.
//!
//! Orders two to four are estimated with unbiased k-statistics, orders five
//! and six with plug-in central moments. Analytic cumulants for a handful of
//! families serve as test oracles and as inputs to the estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::binomial;

/// Highest cumulant order tracked anywhere in the crate.
pub const MAX_ORDER: usize = 6;

const REALIZABILITY_TOL: f64 = 1e-9;

/// Cumulants `c2..c6` of a distribution or sample, with the dimensionless
/// skewness `gamma3 = c3 / c2^{3/2}` and excess kurtosis `gamma4 = c4 / c2^2`.
///
/// Orders above [`CumulantSet::order`] are treated as zero (perforated) by the
/// `c3`/`c4` accessors and reported as `None` by [`CumulantSet::get`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantSet {
    cumulants: [f64; 5],
    order: usize,
    gamma3: f64,
    gamma4: f64,
}

/// Perforation classes of close-to-Gaussian variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Gaussian,
    /// Informative `gamma3`, all higher shape coefficients zeroed.
    Asymmetric,
    /// Informative even coefficients, odd coefficients zeroed.
    Excess,
    /// Informative `gamma3` and `gamma4`, orders five and up zeroed.
    AsymmetricExcess,
}

impl CumulantSet {
    /// Cumulant set of order four.
    pub fn new(c2: f64, c3: f64, c4: f64) -> Result<Self> {
        Self::from_cumulants(&[c2, c3, c4])
    }

    /// Builds a set from `[c2, c3, ..]`; the slice length fixes the order.
    pub fn from_cumulants(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > MAX_ORDER - 1 {
            return Err(Error::InvalidCumulants(format!(
                "expected between 1 and {} cumulants starting at c2, got {}",
                MAX_ORDER - 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCumulants("non-finite cumulant".into()));
        }
        let c2 = values[0];
        if c2 < 0.0 {
            return Err(Error::InvalidCumulants(format!("negative variance {c2}")));
        }
        let mut cumulants = [0.0; 5];
        cumulants[..values.len()].copy_from_slice(values);
        let order = values.len() + 1;
        let (gamma3, gamma4) = if c2 > 0.0 {
            (cumulants[1] / c2.powf(1.5), cumulants[2] / (c2 * c2))
        } else {
            if values[1..].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidCumulants(
                    "zero variance with non-zero higher cumulants".into(),
                ));
            }
            (0.0, 0.0)
        };
        if c2 > 0.0 && order >= 4 && gamma4 < gamma3 * gamma3 - 2.0 - REALIZABILITY_TOL {
            return Err(Error::InvalidCumulants(format!(
                "gamma4 = {gamma4} violates gamma4 >= gamma3^2 - 2 (gamma3 = {gamma3})"
            )));
        }
        Ok(Self {
            cumulants,
            order,
            gamma3,
            gamma4,
        })
    }

    /// Extends an order-four set with `c5`, `c6`.
    pub fn with_higher(self, c5: f64, c6: f64) -> Result<Self> {
        Self::from_cumulants(&[self.c2(), self.c3(), self.c4(), c5, c6])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Cumulant of order `r` (`2..=6`) if stored.
    pub fn get(&self, r: usize) -> Option<f64> {
        if (2..=self.order).contains(&r) {
            Some(self.cumulants[r - 2])
        } else {
            None
        }
    }

    pub fn c2(&self) -> f64 {
        self.cumulants[0]
    }

    pub fn c3(&self) -> f64 {
        self.get(3).unwrap_or(0.0)
    }

    pub fn c4(&self) -> f64 {
        self.get(4).unwrap_or(0.0)
    }

    pub fn c5(&self) -> Option<f64> {
        self.get(5)
    }

    pub fn c6(&self) -> Option<f64> {
        self.get(6)
    }

    pub fn gamma3(&self) -> f64 {
        self.gamma3
    }

    pub fn gamma4(&self) -> f64 {
        self.gamma4
    }

    /// Standardized cumulant `c_r / c2^{r/2}`.
    pub fn standardized(&self, r: usize) -> Option<f64> {
        let c2 = self.c2();
        if c2 <= 0.0 {
            return self.get(r).map(|_| 0.0);
        }
        self.get(r).map(|c| c / c2.powf(r as f64 / 2.0))
    }

    /// Zeroes the cumulants the class treats as uninformative.
    pub fn perforate(&self, class: ShapeClass) -> Result<Self> {
        let keep = |r: usize| -> bool {
            match class {
                ShapeClass::Gaussian => false,
                ShapeClass::Asymmetric => r == 3,
                ShapeClass::Excess => r % 2 == 0,
                ShapeClass::AsymmetricExcess => r <= 4,
            }
        };
        let values: Vec<f64> = (2..=self.order)
            .map(|r| {
                if r == 2 || keep(r) {
                    self.cumulants[r - 2]
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_cumulants(&values)
    }

    /// Classifies the set by which of `|gamma3|`, `|gamma4|` exceed `tol`.
    pub fn classify(&self, tol: f64) -> ShapeClass {
        match (self.gamma3.abs() > tol, self.gamma4.abs() > tol) {
            (false, false) => ShapeClass::Gaussian,
            (true, false) => ShapeClass::Asymmetric,
            (false, true) => ShapeClass::Excess,
            (true, true) => ShapeClass::AsymmetricExcess,
        }
    }
}

/// Raw moments `alpha_1..alpha_order`, `alpha_i = E{xi^i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialMomentVector {
    alpha: Vec<f64>,
}

impl InitialMomentVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidMoments("empty moment vector".into()));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidMoments("non-finite moment".into()));
        }
        if alpha.len() >= 2 {
            let (a1, a2) = (alpha[0], alpha[1]);
            let tol = 1e-12 * a2.abs().max(a1 * a1).max(f64::MIN_POSITIVE);
            if a2 < a1 * a1 - tol {
                return Err(Error::InvalidMoments(format!(
                    "alpha2 = {a2} < alpha1^2 = {}",
                    a1 * a1
                )));
            }
        }
        Ok(Self { alpha })
    }

    /// Empirical raw moments of a sample.
    pub fn from_sample(sample: &[f64], order: usize) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let n = sample.len() as f64;
        let mut alpha = vec![0.0; order];
        for &x in sample {
            let mut p = 1.0;
            for a in alpha.iter_mut() {
                p *= x;
                *a += p;
            }
        }
        for a in alpha.iter_mut() {
            *a /= n;
        }
        Self::new(alpha)
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// `alpha_i` for `i` in `1..=order`; `alpha_0 = 1`.
    pub fn get(&self, i: usize) -> Option<f64> {
        match i {
            0 => Some(1.0),
            _ => self.alpha.get(i - 1).copied(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }
}

fn central_sums(sample: &[f64], max_order: usize) -> (f64, Vec<f64>) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    // m[r] = (1/n) sum (x - mean)^r for r = 0..=max_order
    let mut m = vec![0.0; max_order + 1];
    for &x in sample {
        let d = x - mean;
        let mut p = 1.0;
        for slot in m.iter_mut() {
            *slot += p;
            p *= d;
        }
    }
    for slot in m.iter_mut() {
        *slot /= n;
    }
    (mean, m)
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn sample_mean(sample: &[f64]) -> f64 {
    sample.iter().sum::<f64>() / sample.len() as f64
}

/// Estimates cumulants `c2..c_max_order` of a sample.
///
/// Orders up to four use the unbiased k-statistics. Orders five and six use
/// plug-in central moments. On small samples the k-statistics can violate
/// `gamma4 >= gamma3^2 - 2`; the plug-in estimates of the empirical
/// distribution are returned instead in that case.
pub fn sample_cumulants(sample: &[f64], max_order: usize) -> Result<CumulantSet> {
    if !(2..=MAX_ORDER).contains(&max_order) {
        return Err(Error::InvalidArgument(format!(
            "max_order must be in 2..=6, got {max_order}"
        )));
    }
    let len = sample.len();
    if len < max_order + 1 {
        return Err(Error::InsufficientData {
            needed: max_order + 1,
            got: len,
        });
    }
    let (mean, m) = central_sums(sample, max_order);
    let floor = 4.0 * f64::EPSILON * mean.abs();
    if m[2] <= floor * floor || m[2] == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let n = len as f64;
    let plug_in = |r: usize| -> f64 {
        match r {
            2 => m[2],
            3 => m[3],
            4 => m[4] - 3.0 * m[2] * m[2],
            5 => m[5] - 10.0 * m[3] * m[2],
            6 => m[6] - 15.0 * m[4] * m[2] - 10.0 * m[3] * m[3] + 30.0 * m[2].powi(3),
            _ => unreachable!(),
        }
    };
    let mut values = Vec::with_capacity(max_order - 1);
    values.push(n * m[2] / (n - 1.0));
    if max_order >= 3 {
        values.push(n * n * m[3] / ((n - 1.0) * (n - 2.0)));
    }
    if max_order >= 4 {
        values.push(
            n * n * ((n + 1.0) * m[4] - 3.0 * (n - 1.0) * m[2] * m[2])
                / ((n - 1.0) * (n - 2.0) * (n - 3.0)),
        );
    }
    for r in 5..=max_order {
        values.push(plug_in(r));
    }
    match CumulantSet::from_cumulants(&values) {
        Ok(set) => Ok(set),
        Err(Error::InvalidCumulants(_)) => {
            let fallback: Vec<f64> = (2..=max_order).map(plug_in).collect();
            CumulantSet::from_cumulants(&fallback)
        }
        Err(e) => Err(e),
    }
}

/// Raw moments `alpha_1..alpha_order` of a variable with the given mean and
/// cumulants, via `alpha_n = sum_k C(n-1, k-1) kappa_k alpha_{n-k}`.
pub fn raw_moments_from_cumulants(
    c: &CumulantSet,
    mean: f64,
    order: usize,
) -> Result<InitialMomentVector> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be >= 1".into()));
    }
    if order > MAX_ORDER || (order >= 2 && order > c.order()) {
        return Err(Error::OrderUnavailable {
            requested: order,
            available: c.order().min(MAX_ORDER),
        });
    }
    let kappa = |k: usize| -> f64 {
        if k == 1 {
            mean
        } else {
            c.get(k).unwrap_or(0.0)
        }
    };
    let mut alpha = vec![1.0; order + 1];
    for n in 1..=order {
        let mut acc = 0.0;
        for k in 1..=n {
            acc += binomial((n - 1) as u64, (k - 1) as u64) as f64 * kappa(k) * alpha[n - k];
        }
        alpha[n] = acc;
    }
    alpha.remove(0);
    InitialMomentVector::new(alpha)
}

/// Inverse of [`raw_moments_from_cumulants`]: returns `(mean, cumulants)`.
pub fn cumulants_from_raw_moments(alpha: &InitialMomentVector) -> Result<(f64, CumulantSet)> {
    let order = alpha.order();
    if order < 2 {
        return Err(Error::OrderUnavailable {
            requested: 2,
            available: order,
        });
    }
    if order > MAX_ORDER {
        return Err(Error::OrderUnavailable {
            requested: order,
            available: MAX_ORDER,
        });
    }
    let a = |i: usize| alpha.get(i).unwrap();
    let mut kappa = vec![0.0; order + 1];
    for n in 1..=order {
        let mut acc = a(n);
        for k in 1..n {
            acc -= binomial((n - 1) as u64, (k - 1) as u64) as f64 * kappa[k] * a(n - k);
        }
        kappa[n] = acc;
    }
    let set = CumulantSet::from_cumulants(&kappa[2..])?;
    Ok((kappa[1], set))
}

/// Distribution families with closed-form cumulants.
///
/// `ExponentialPower` has density proportional to `exp(-|x|^beta)` (zero
/// mean, unit scale); `beta = 2` is a normal with variance 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    ChiSquare { k: f64 },
    Gamma { shape: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    ExponentialPower { beta: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Distribution::ChiSquare { k } => k.is_finite() && k > 0.0,
            Distribution::Gamma { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
            Distribution::LogNormal { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && sigma > 0.0
            }
            Distribution::Uniform { a, b } => a.is_finite() && b.is_finite() && b > a,
            Distribution::ExponentialPower { beta } => beta.is_finite() && beta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedDistribution(format!(
                "invalid parameters for {self}"
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::ChiSquare { k } => k,
            Distribution::Gamma { shape, scale } => shape * scale,
            Distribution::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Distribution::Uniform { a, b } => 0.5 * (a + b),
            Distribution::ExponentialPower { .. } => 0.0,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Distribution::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            Distribution::ChiSquare { k } => write!(f, "chi-square({k})"),
            Distribution::Gamma { shape, scale } => write!(f, "gamma({shape},{scale})"),
            Distribution::LogNormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
            Distribution::Uniform { a, b } => write!(f, "uniform({a},{b})"),
            Distribution::ExponentialPower { beta } => write!(f, "exponential-power({beta})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// Parses descriptors such as `normal(0,1)`, `chi-square(3)`, `uniform(0,1)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unsupported = || Error::UnsupportedDistribution(s.to_string());
        let (name, rest) = s.split_once('(').ok_or_else(unsupported)?;
        let args = rest.strip_suffix(')').ok_or_else(unsupported)?;
        let params: Vec<f64> = args
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| unsupported())?;
        let need = |k: usize| -> Result<()> {
            if params.len() == k {
                Ok(())
            } else {
                Err(unsupported())
            }
        };
        let dist = match name.trim().to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => {
                need(2)?;
                Distribution::Normal {
                    mean: params[0],
                    sd: params[1],
                }
            }
            "chi-square" | "chisquare" | "chi2" => {
                need(1)?;
                Distribution::ChiSquare { k: params[0] }
            }
            "gamma" => {
                need(2)?;
                Distribution::Gamma {
                    shape: params[0],
                    scale: params[1],
                }
            }
            "lognormal" => {
                need(2)?;
                Distribution::LogNormal {
                    mu: params[0],
                    sigma: params[1],
                }
            }
            "uniform" => {
                need(2)?;
                Distribution::Uniform {
                    a: params[0],
                    b: params[1],
                }
            }
            "exponential-power" | "exppower" => {
                need(1)?;
                Distribution::ExponentialPower { beta: params[0] }
            }
            _ => return Err(unsupported()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Exact population cumulants `c2..c6` of a supported family.
pub fn analytic_cumulants(dist: &Distribution) -> Result<CumulantSet> {
    dist.validate()?;
    let values: Vec<f64> = match *dist {
        Distribution::Normal { sd, .. } => vec![sd * sd, 0.0, 0.0, 0.0, 0.0],
        Distribution::ChiSquare { k } => (2..=MAX_ORDER)
            .map(|r| 2f64.powi(r as i32 - 1) * factorial(r - 1) * k)
            .collect(),
        Distribution::Gamma { shape, scale } => (2..=MAX_ORDER)
            .map(|r| shape * scale.powi(r as i32) * factorial(r - 1))
            .collect(),
        Distribution::LogNormal { mu, sigma } => {
            let alpha: Vec<f64> = (1..=MAX_ORDER)
                .map(|r| {
                    let r = r as f64;
                    (r * mu + 0.5 * r * r * sigma * sigma).exp()
                })
                .collect();
            let (_, set) = cumulants_from_raw_moments(&InitialMomentVector::new(alpha)?)?;
            return Ok(set);
        }
        Distribution::Uniform { a, b } => {
            let w = b - a;
            vec![
                w.powi(2) / 12.0,
                0.0,
                -w.powi(4) / 120.0,
                0.0,
                w.powi(6) / 252.0,
            ]
        }
        Distribution::ExponentialPower { beta } => {
            let norm = ln_gamma(1.0 / beta);
            let even = |r: usize| ((ln_gamma((r as f64 + 1.0) / beta)) - norm).exp();
            let alpha = vec![0.0, even(2), 0.0, even(4), 0.0, even(6)];
            let (_, set) = cumulants_from_raw_moments(&InitialMomentVector::new(alpha)?)?;
            return Ok(set);
        }
    };
    CumulantSet::from_cumulants(&values)
}
