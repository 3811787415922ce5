//! Per-replicate scenario bodies.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{
    CusumParams, DispatchParams, LocationParams, RegressionParams, ShapeSource, SlsWeighting, SpectralParams,
};
use crate::changepoint::{build_polynomial_score, CusumDetector, Regime};
use crate::error::Result;
use crate::moments::{analytic_cumulants, sample_cumulants, CumulantSet, Distribution};
use crate::pmm::{pmm2_estimate_location, pmm2_regression, pmm_dispatch, DispatchConfig};
use crate::regression::{least_squares_fit, Response};
use crate::signals::{generate, sample_distribution, spectral_metrics, SignalSpec};
use crate::sls::{optimal_weights, sls_default_omega, sls_estimate, SlsProblem};
use crate::volterra::{mmse_adapt, moment_adapt, volterra_predict, AdaptationMethod};

/// One output row: a single quantity from one estimator in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub replicate: usize,
    pub seed: u64,
    pub sample_size: usize,
    pub estimator: String,
    pub quantity: String,
    pub estimate: f64,
    pub truth: f64,
    pub sq_error: f64,
    /// `ok` or `error`.
    pub status: String,
    #[serde(default)]
    pub note: String,
}

/// Seed of replicate `r`: `base_seed XOR r`.
pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    base_seed ^ replicate as u64
}

/// Independent stream `stream` of a replicate seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row builder for one replicate.
pub(crate) struct Rows<'a> {
    pub scenario: &'a str,
    pub replicate: usize,
    pub seed: u64,
    pub out: Vec<ResultRecord>,
}

impl<'a> Rows<'a> {
    pub fn new(scenario: &'a str, replicate: usize, seed: u64) -> Self {
        Self {
            scenario,
            replicate,
            seed,
            out: Vec::new(),
        }
    }

    pub fn push(&mut self, n: usize, estimator: &str, quantity: &str, estimate: f64, truth: f64, note: &str) {
        let sq_error = if truth.is_nan() { f64::NAN } else { (estimate - truth).powi(2) };
        self.out.push(ResultRecord {
            scenario: self.scenario.to_string(),
            replicate: self.replicate,
            seed: self.seed,
            sample_size: n,
            estimator: estimator.to_string(),
            quantity: quantity.to_string(),
            estimate,
            truth,
            sq_error,
            status: "ok".into(),
            note: note.to_string(),
        });
    }

    pub fn fail(&mut self, n: usize, estimator: &str, quantity: &str, truth: f64, err: &crate::Error) {
        self.out.push(ResultRecord {
            scenario: self.scenario.to_string(),
            replicate: self.replicate,
            seed: self.seed,
            sample_size: n,
            estimator: estimator.to_string(),
            quantity: quantity.to_string(),
            estimate: f64::NAN,
            truth,
            sq_error: f64::NAN,
            status: "error".into(),
            note: err.to_string(),
        });
    }

    /// Records every component of `result`, or one error row per quantity.
    pub fn record(&mut self, n: usize, estimator: &str, names: &[String], truth: &[f64], result: Result<Vec<f64>>) {
        match result {
            Ok(values) => {
                for ((q, v), t) in names.iter().zip(values).zip(truth) {
                    self.push(n, estimator, q, v, *t, "");
                }
            }
            Err(e) => {
                for (q, t) in names.iter().zip(truth) {
                    self.fail(n, estimator, q, *t, &e);
                }
            }
        }
    }
}

fn centred_noise(dist: &Distribution, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mean = dist.mean();
    Ok(sample_distribution(dist, n, rng)?
        .into_iter()
        .map(|v| scale * (v - mean))
        .collect())
}

fn scaled_cumulants(dist: &Distribution, scale: f64) -> Result<CumulantSet> {
    let c = analytic_cumulants(dist)?;
    CumulantSet::new(c.c2() * scale.powi(2), c.c3() * scale.powi(3), c.c4() * scale.powi(4))
}

pub(crate) fn g2_validation(p: &LocationParams, sizes: &[usize], rows: &mut Rows<'_>) {
    let names = ["location".to_string()];
    let truth = [p.location];
    for (k, &n) in sizes.iter().enumerate() {
        let mut rng = stream_rng(rows.seed, k as u64);
        let sample = match centred_noise(&p.noise, n, 1.0, &mut rng) {
            Ok(s) => s.into_iter().map(|v| v + p.location).collect::<Vec<_>>(),
            Err(e) => {
                rows.fail(n, "mean", "location", p.location, &e);
                continue;
            }
        };
        let mean = sample.iter().sum::<f64>() / n as f64;
        rows.push(n, "mean", "location", mean, p.location, "");
        let shape = match p.shape {
            ShapeSource::Estimated => sample_cumulants(&sample, 4),
            ShapeSource::Analytic => analytic_cumulants(&p.noise),
        };
        let est = shape.and_then(|c| pmm2_estimate_location(&sample, &c)).map(|e| e.theta_hat);
        rows.record(n, "pmm2", &names, &truth, est);
    }
}

fn regression_design(p: &RegressionParams, n: usize) -> DMatrix<f64> {
    let [a, b] = p.x_range;
    let x = |v: usize| a + (b - a) * v as f64 / (n - 1) as f64;
    match p.model {
        Response::Linear => DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { x(r) }),
        _ => DMatrix::from_fn(n, 1, |r, _| x(r)),
    }
}

fn theta_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("theta{j}")).collect()
}

/// Shared data generation for the regression scenarios. Nonlinear fits start
/// from the true parameter.
pub(crate) fn regression(p: &RegressionParams, sizes: &[usize], with_sls: bool, rows: &mut Rows<'_>) {
    let theta = p.resolved_theta();
    let names = theta_names(theta.len());
    for (k, &n) in sizes.iter().enumerate() {
        let mut rng = stream_rng(rows.seed, k as u64);
        let x = regression_design(p, n);
        let clean = match p.model.fitted(&theta, &x) {
            Ok(c) => c,
            Err(e) => {
                rows.fail(n, "ols", "data", f64::NAN, &e);
                continue;
            }
        };
        let noise = match centred_noise(&p.noise, n, p.noise_scale, &mut rng) {
            Ok(v) => v,
            Err(e) => {
                rows.fail(n, "ols", "data", f64::NAN, &e);
                continue;
            }
        };
        let y = clean + DVector::from_vec(noise);
        let init = if p.model.is_linear() { None } else { Some(theta.as_slice()) };
        let ols = least_squares_fit(p.model, &x, &y, init);
        rows.record(
            n,
            "ols",
            &names,
            &theta,
            ols.clone().map(|f| f.theta.as_slice().to_vec()),
        );
        let shape = match p.shape {
            ShapeSource::Analytic => Some(scaled_cumulants(&p.noise, p.noise_scale)),
            ShapeSource::Estimated => None,
        };
        let pmm = match &shape {
            Some(Err(e)) => Err(e.clone()),
            Some(Ok(c)) => pmm2_regression(&x, &y, p.model, init, Some(c)),
            None => pmm2_regression(&x, &y, p.model, init, None),
        };
        rows.record(n, "pmm2", &names, &theta, pmm.map(|e| e.theta_hat));
        if with_sls {
            let sls = ols.and_then(|fit| {
                let cumulants = || match &shape {
                    Some(c) => c.clone(),
                    None => sample_cumulants(fit.residuals.as_slice(), 4),
                };
                let start = fit.theta.as_slice();
                let est = match p.sls_weighting {
                    SlsWeighting::Optimal => {
                        let w = optimal_weights(&cumulants()?, p.model, &x, start)?;
                        sls_estimate(&SlsProblem::with_weights(&x, &y, p.model, &w)?, start)?
                    }
                    SlsWeighting::DefaultOmega => {
                        let omega = sls_default_omega(&cumulants()?, p.model, &x, start)?;
                        sls_estimate(&SlsProblem::new(&x, &y, p.model, omega)?, start)?
                    }
                    SlsWeighting::Omega(omega) => {
                        sls_estimate(&SlsProblem::new(&x, &y, p.model, omega)?, start)?
                    }
                };
                Ok(est.theta)
            });
            rows.record(n, "sls", &names, &theta, sls);
        }
    }
}

/// Widths for one signal through the channel and one equaliser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOutcome {
    pub width_source: f64,
    pub width_received: f64,
    pub width_processed: f64,
    pub residual_mse: f64,
}

impl SpectralOutcome {
    pub fn width_ratio(&self) -> f64 {
        self.width_processed / self.width_received
    }
}

/// Channel output, equaliser output and the equaliser's residual MSE for one
/// source. The equaliser fits `received -> source` delayed by `p.delay`.
pub fn equalise(p: &SpectralParams, method: AdaptationMethod, source: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let received = p.channel.apply(source);
    let m = p.memory;
    let mut target = vec![0.0; source.len()];
    target[p.delay..].copy_from_slice(&source[..source.len() - p.delay]);
    let report = match method {
        AdaptationMethod::Mmse => mmse_adapt(&received, &target, m, m, p.ridge)?,
        AdaptationMethod::Moment => moment_adapt(&received, &target, m, m, None, p.ridge)?,
    };
    let processed = volterra_predict(&report.kernels, &received)?;
    Ok((received, processed, report.residual_mse))
}

/// Sends `source` through the channel, equalises it and measures effective widths.
pub fn equalise_and_measure(p: &SpectralParams, method: AdaptationMethod, source: &[f64]) -> Result<SpectralOutcome> {
    let (received, processed, residual_mse) = equalise(p, method, source)?;
    let width = |s: &[f64]| spectral_metrics(s, p.sample_rate).map(|m| m.effective_width);
    Ok(SpectralOutcome {
        width_source: width(source)?,
        width_received: width(&received[p.memory - 1..])?,
        width_processed: width(&processed)?,
        residual_mse,
    })
}

/// Source signal `j` at sample-size index `k` of a replicate.
pub(crate) fn spectral_source(p: &SpectralParams, seed: u64, k: usize, n: usize, j: usize) -> SignalSpec {
    SignalSpec {
        kind: p.signals[j].clone(),
        length: n,
        sample_rate: p.sample_rate,
        seed: seed.wrapping_add(((k * p.signals.len() + j) as u64) << 32),
    }
}

pub(crate) fn volterra_spectral(p: &SpectralParams, sizes: &[usize], rows: &mut Rows<'_>) {
    let nan = f64::NAN;
    for (k, &n) in sizes.iter().enumerate() {
        for (j, kind) in p.signals.iter().enumerate() {
            let spec = spectral_source(p, rows.seed, k, n, j);
            let names: Vec<String> = ["width_source", "width_received", "width_processed", "width_ratio", "residual_mse"]
                .iter()
                .map(|q| format!("{}/{q}", kind.name()))
                .collect();
            let truth = [nan; 5];
            let source = generate(&spec);
            for method in &p.methods {
                let est = match method {
                    AdaptationMethod::Mmse => "mmse",
                    AdaptationMethod::Moment => "moment",
                };
                let out = source.clone().and_then(|s| equalise_and_measure(p, *method, &s)).map(|o| {
                    vec![o.width_source, o.width_received, o.width_processed, o.width_ratio(), o.residual_mse]
                });
                rows.record(n, est, &names, &truth, out);
            }
        }
    }
}

pub(crate) fn cusum_far(p: &CusumParams, rows: &mut Rows<'_>, detectors: &Result<Vec<CusumDetector>>) {
    let n = p.horizon;
    let detectors = match detectors {
        Ok(d) => d,
        Err(e) => {
            for eps in &p.epsilons {
                rows.fail(n, "cusum", &format!("alarm@{eps}"), 0.0, e);
            }
            return;
        }
    };
    let h0 = match quiet_stream(p, rows.seed) {
        Ok(v) => v,
        Err(e) => {
            rows.fail(n, "cusum", "h0", f64::NAN, &e);
            return;
        }
    };
    for d in detectors {
        let fired = d.first_alarm(&h0).is_some();
        rows.push(n, "cusum", &format!("alarm@{}", d.epsilon), f64::from(u8::from(fired)), 0.0, "");
    }
    let Some(change) = p.change_at else { return };
    let stream = match shifted_stream(p, rows.seed, change) {
        Ok(s) => s,
        Err(e) => {
            rows.fail(n, "cusum", "delay", f64::NAN, &e);
            return;
        }
    };
    for d in detectors {
        let q = format!("delay@{}", d.epsilon);
        match d.first_alarm(&stream) {
            Some(tau) if tau > change => rows.push(n, "cusum", &q, (tau - change) as f64, f64::NAN, ""),
            Some(tau) => rows.push(n, "cusum", &q, f64::NAN, f64::NAN, &format!("false alarm at {tau}")),
            None => rows.push(n, "cusum", &q, f64::NAN, f64::NAN, "missed"),
        }
    }
}

/// In-control stream of length `horizon` for a replicate seed.
pub(crate) fn quiet_stream(p: &CusumParams, seed: u64) -> Result<Vec<f64>> {
    let pre = Distribution::Normal { mean: p.mean, sd: p.sd };
    sample_distribution(&pre, p.horizon, &mut stream_rng(seed, 0))
}

/// `change` in-control samples followed by `delay_cap` shifted ones.
pub(crate) fn shifted_stream(p: &CusumParams, seed: u64, change: usize) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, 1);
    let pre = Distribution::Normal { mean: p.mean, sd: p.sd };
    let post = Distribution::Normal {
        mean: p.mean + p.shift * p.sd,
        sd: p.sd,
    };
    let mut s = sample_distribution(&pre, change, &mut rng)?;
    s.extend(sample_distribution(&post, p.delay_cap, &mut rng)?);
    Ok(s)
}

/// Detectors for every configured `epsilon`, shared across replicates.
pub fn cusum_detectors(p: &CusumParams) -> Result<Vec<CusumDetector>> {
    let pre = Regime::gaussian(p.mean, p.sd)?;
    let post = Regime::gaussian(p.mean + p.shift * p.sd, p.sd)?;
    let score = build_polynomial_score(&pre, &post, p.degree)?;
    p.epsilons
        .iter()
        .map(|&eps| CusumDetector::calibrated(score.clone(), eps, p.horizon, p.bound))
        .collect()
}

pub(crate) fn dispatch_accuracy(p: &DispatchParams, sizes: &[usize], rows: &mut Rows<'_>) {
    let cfg = DispatchConfig::default();
    for (k, &n) in sizes.iter().enumerate() {
        for (j, case) in p.cases.iter().enumerate() {
            let mut rng = stream_rng(rows.seed, (k * p.cases.len() + j) as u64);
            let q = case.distribution.to_string();
            let decision = sample_distribution(&case.distribution, n, &mut rng).and_then(|s| pmm_dispatch(&s, &cfg));
            match decision {
                Ok(d) => {
                    let hit = f64::from(u8::from(d.choice == case.expected));
                    rows.push(n, "dispatch", &q, hit, 1.0, &d.choice.to_string());
                }
                Err(e) => rows.fail(n, "dispatch", &q, 1.0, &e),
            }
        }
    }
}
