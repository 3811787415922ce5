//! Polynomial CUSUM change detection.
//!
//! The per-sample score is a stochastic polynomial in `x - mu_pre` whose
//! coefficients solve `F_pre h = Psi_post - Psi_pre`, the same moment
//! criterion that yields PMM weights. With `D = d^T F_pre^-1 d` the score
//!
//! `L(x) = sum_i h_i ((x - mu_pre)^i - Psi_pre_i) - D/2`
//!
//! has mean `-D/2` and variance `D` before the change and mean `+D/2`
//! after it. The detector runs the reflected sum
//! `T_n = max(0, T_{n-1} + L(x_n))` and fires at the first `T_n > h`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{raw_moments_from_cumulants, CumulantSet};
use crate::stochpoly::CorrelantMatrix;

/// Mean and cumulants of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub mean: f64,
    pub cumulants: CumulantSet,
}

impl Regime {
    pub fn new(mean: f64, cumulants: CumulantSet) -> Self {
        Self { mean, cumulants }
    }

    /// Gaussian regime with standard deviation `sd`.
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Ok(Self::new(mean, CumulantSet::new(sd * sd, 0.0, 0.0)?))
    }
}

/// Polynomial score with its pre/post-change moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialScore {
    /// Coefficient of `(x - center)^i`, `i = 1..=degree`.
    pub coefficients: Vec<f64>,
    pub offset: f64,
    pub center: f64,
    pub pre_mean: f64,
    pub pre_variance: f64,
    pub post_mean: f64,
}

impl PolynomialScore {
    pub fn degree(&self) -> usize {
        self.coefficients.len()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let d = x - self.center;
        // Horner without constant term
        let mut acc = 0.0;
        for h in self.coefficients.iter().rev() {
            acc = (acc + h) * d;
        }
        acc + self.offset
    }

    pub fn stats(&self) -> ScoreStats {
        ScoreStats {
            mean: self.pre_mean,
            variance: self.pre_variance,
        }
    }
}

/// Pre-change mean and variance of a per-sample score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub variance: f64,
}

/// Builds the degree-1 or degree-2 polynomial score for a change `pre -> post`.
pub fn build_polynomial_score(pre: &Regime, post: &Regime, degree: usize) -> Result<PolynomialScore> {
    if !(1..=2).contains(&degree) {
        return Err(Error::InvalidArgument(format!("score degree must be 1 or 2, got {degree}")));
    }
    let shift = post.mean - pre.mean;
    let pre_moments = raw_moments_from_cumulants(&pre.cumulants, 0.0, 2 * degree)?;
    let post_moments = raw_moments_from_cumulants(&post.cumulants, shift, degree)?;
    let f = CorrelantMatrix::from_power_moments(degree, &pre_moments)?;
    let d = DVector::from_fn(degree, |i, _| {
        post_moments.get(i + 1).unwrap() - pre_moments.get(i + 1).unwrap()
    });
    let scale = (1..=degree)
        .map(|i| pre_moments.get(2 * i).unwrap().sqrt())
        .fold(f64::MIN_POSITIVE, f64::max);
    if d.amax() <= 1e-12 * scale {
        return Err(Error::IndistinguishableRegimes);
    }
    let h = f.solve(&d)?;
    let distance = h.dot(&d);
    if !(distance > 0.0) {
        return Err(Error::IndistinguishableRegimes);
    }
    let offset = -h.dot(f.psi()) - 0.5 * distance;
    Ok(PolynomialScore {
        coefficients: h.iter().copied().collect(),
        offset,
        center: pre.mean,
        pre_mean: -0.5 * distance,
        pre_variance: distance,
        post_mean: 0.5 * distance,
    })
}

/// Tail inequality used for the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TailBound {
    #[default]
    Chebyshev,
    /// Vysochanskij-Petunin; valid when the window sums are unimodal.
    VysochanskijPetunin,
}

impl TailBound {
    /// Bound on `P(X - E X >= t)` for variance `var`.
    pub fn tail(&self, var: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let ratio = var / (t * t);
        let p = match self {
            TailBound::Chebyshev => ratio,
            TailBound::VysochanskijPetunin => {
                if t * t >= 8.0 / 3.0 * var {
                    4.0 / 9.0 * ratio
                } else {
                    4.0 / 3.0 * ratio - 1.0 / 3.0
                }
            }
        };
        p.min(1.0)
    }
}

/// Union bound on the false-alarm probability within `horizon` samples.
///
/// An alarm by `horizon` means some window sum of the score exceeds `h`;
/// there are `horizon - L + 1` windows of length `L`, each with mean `L m`
/// and variance `L s^2`.
pub fn false_alarm_bound(stats: &ScoreStats, threshold: f64, horizon: usize, bound: TailBound) -> f64 {
    let mut total = 0.0;
    for len in 1..=horizon {
        let l = len as f64;
        total += (horizon - len + 1) as f64 * bound.tail(stats.variance * l, threshold - stats.mean * l);
        if total >= 1.0 {
            return 1.0;
        }
    }
    total
}

/// Smallest threshold (to bisection precision) whose false-alarm bound over
/// `horizon` samples is at most `epsilon`.
pub fn calibrate_threshold(stats: &ScoreStats, epsilon: f64, horizon: usize, bound: TailBound) -> Result<f64> {
    if !(stats.mean < 0.0) {
        return Err(Error::DriftViolation { mean: stats.mean });
    }
    if !(stats.variance.is_finite() && stats.variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "score variance must be finite and > 0, got {}",
            stats.variance
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let far = |h: f64| false_alarm_bound(stats, h, horizon, bound);
    let mut hi = stats.variance.sqrt();
    while far(hi) > epsilon {
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if far(mid) > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Calibrated polynomial CUSUM detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumDetector {
    pub score: PolynomialScore,
    pub threshold: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub bound: TailBound,
}

impl CusumDetector {
    pub fn calibrated(score: PolynomialScore, epsilon: f64, horizon: usize, bound: TailBound) -> Result<Self> {
        let threshold = calibrate_threshold(&score.stats(), epsilon, horizon, bound)?;
        Ok(Self {
            score,
            threshold,
            epsilon,
            horizon,
            bound,
        })
    }

    /// First alarm index (1-based) without storing the trace.
    pub fn first_alarm(&self, stream: &[f64]) -> Option<usize> {
        let mut t = 0.0_f64;
        for (n, &x) in stream.iter().enumerate() {
            t = (t + self.score.eval(x)).max(0.0);
            if t > self.threshold {
                return Some(n + 1);
            }
        }
        None
    }
}

/// Outcome of a detector pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub fired: bool,
    /// 1-based index of the first `T_n > h`.
    pub tau: Option<usize>,
    /// `T_1..T_len`.
    pub trace: Vec<f64>,
    pub threshold: f64,
}

/// One pass of the detector over `stream`.
pub fn run_detector(detector: &CusumDetector, stream: &[f64]) -> DetectionRecord {
    cusum(stream.iter().map(|&x| detector.score.eval(x)), detector.threshold)
}

/// Reflected CUSUM over precomputed scores.
pub fn cusum<I: IntoIterator<Item = f64>>(scores: I, threshold: f64) -> DetectionRecord {
    let mut t = 0.0_f64;
    let mut tau = None;
    let trace = scores
        .into_iter()
        .enumerate()
        .map(|(n, s)| {
            t = (t + s).max(0.0);
            if tau.is_none() && t > threshold {
                tau = Some(n + 1);
            }
            t
        })
        .collect();
    DetectionRecord {
        fired: tau.is_some(),
        tau,
        trace,
        threshold,
    }
}

/// Writes `n,T_n,fired` rows; `fired` is 1 from the alarm onwards.
pub fn write_trace_csv<W: Write>(writer: W, record: &DetectionRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["n", "T_n", "fired"]).map_err(io)?;
    for (i, t) in record.trace.iter().enumerate() {
        let n = i + 1;
        let fired = record.tau.is_some_and(|tau| n >= tau);
        w.write_record([n.to_string(), format!("{t:e}"), u8::from(fired).to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
