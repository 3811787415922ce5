//! Seeded Monte-Carlo checks. Measured values are printed (`--nocapture`) so
//! they can be compared across changes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use polymoment::changepoint::{build_polynomial_score, CusumDetector, Regime, TailBound};
use polymoment::moments::{analytic_cumulants, sample_cumulants};
use polymoment::pmm::{pmm2_estimate_location, pmm3_estimate_location};
use polymoment::regression::Response;
use polymoment::signals::{generate, sample_distribution, SignalKind, SignalSpec};
use polymoment::sls::{sls_default_omega, sls_estimate, SlsProblem};
use polymoment::volterra::{kernels_to_coefficients, mmse_adapt, moment_adapt, AdaptationMethod};
use polymoment::{CumulantSet, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution as _, StandardNormal};

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn mse(v: &[f64], truth: f64) -> f64 {
    v.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn chi_square_sample_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let chi = ChiSquared::new(3.0).unwrap();
    let sample: Vec<f64> = (0..1_000_000).map(|_| chi.sample(&mut rng)).collect();
    let c = sample_cumulants(&sample, 4).unwrap();
    println!("chi2(3), N=1e6: gamma3 {:.4}, gamma4 {:.4}", c.gamma3(), c.gamma4());
    assert!((c.gamma3() - (8.0f64 / 3.0).sqrt()).abs() <= 0.02);
    assert!((c.gamma4() - 4.0).abs() <= 0.05);
}

#[test]
fn generated_chi_square_noise_has_expected_skew() {
    let spec = SignalSpec::new(
        SignalKind::IidNoise {
            distribution: Distribution::ChiSquare { k: 3.0 },
        },
        1_000_000,
        408,
    );
    let s = generate(&spec).unwrap();
    let g3 = sample_cumulants(&s, 4).unwrap().gamma3();
    println!("generated chi2(3), N=1e6: gamma3 {g3:.4}");
    assert!((g3 - 1.633).abs() <= 0.02);
}

#[test]
fn pmm2_location_variance_at_n200() {
    let c = analytic_cumulants(&Distribution::ChiSquare { k: 3.0 }).unwrap();
    let chi = ChiSquared::new(3.0).unwrap();
    let (mut means, mut pmm) = (Vec::new(), Vec::new());
    for r in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(203 ^ r);
        let s: Vec<f64> = (0..200).map(|_| chi.sample(&mut rng) - 3.0).collect();
        means.push(s.iter().sum::<f64>() / 200.0);
        pmm.push(pmm2_estimate_location(&s, &c).unwrap().theta_hat[0]);
    }
    let ratio = variance(&pmm) / variance(&means);
    println!("PMM2 location, chi2(3), N=200, m=1000: var ratio {ratio:.4}");
    assert!((0.50..=0.65).contains(&ratio));
}

#[test]
fn pmm3_location_variance_for_uniform_noise() {
    let c = analytic_cumulants(&Distribution::Uniform { a: 0.0, b: 1.0 }).unwrap();
    let dist = Distribution::Uniform { a: -0.5, b: 0.5 };
    let (mut means, mut pmm) = (Vec::new(), Vec::new());
    for r in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(238 ^ r);
        let s = sample_distribution(&dist, 500, &mut rng).unwrap();
        means.push(s.iter().sum::<f64>() / 500.0);
        pmm.push(pmm3_estimate_location(&s, &c).unwrap().theta_hat[0]);
    }
    let ratio = variance(&pmm) / variance(&means);
    println!("PMM3 location, uniform, N=500, m=1000: var ratio {ratio:.4}");
    assert!(ratio < 0.95);
}

fn exponential_design(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64)
}

#[test]
fn default_omega_for_chi_square_is_positive() {
    let c = analytic_cumulants(&Distribution::ChiSquare { k: 3.0 }).unwrap();
    let omega = sls_default_omega(&c, Response::Exponential, &exponential_design(100), &[2.0, 0.5]).unwrap();
    println!("default omega, chi2(3): {omega:e}");
    assert!(omega > 0.0);
}

#[test]
fn default_omega_under_gaussian_errors_changes_nothing() {
    let n = 100;
    let x = exponential_design(n);
    let gaussian = CumulantSet::new(1.0, 0.0, 0.0).unwrap();
    let omega = sls_default_omega(&gaussian, Response::Exponential, &x, &[2.0, 0.5]).unwrap();
    let (mut plain, mut chosen) = (Vec::new(), Vec::new());
    for r in 0..400u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(r);
        let y = DVector::from_fn(n, |i, _| 2.0 * (0.5 * x[(i, 0)]).exp() + rng.sample::<f64, _>(StandardNormal));
        let a = sls_estimate(&SlsProblem::new(&x, &y, Response::Exponential, 0.0).unwrap(), &[2.0, 0.5]).unwrap();
        let b = sls_estimate(&SlsProblem::new(&x, &y, Response::Exponential, omega).unwrap(), &[2.0, 0.5]).unwrap();
        plain.push(a.theta[1]);
        chosen.push(b.theta[1]);
    }
    let ratio = mse(&chosen, 0.5) / mse(&plain, 0.5);
    println!("gaussian errors: omega* {omega:e}, MSE(omega*)/MSE(0) {ratio:.4}");
    assert!((0.98..=1.02).contains(&ratio));
}

#[test]
fn moment_versus_mmse_adaptation_on_skewed_input() {
    let chi = ChiSquared::new(3.0).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut fallbacks = 0;
    for r in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(363 ^ r);
        let x: Vec<f64> = (0..400).map(|_| (chi.sample(&mut rng) - 3.0) / 6f64.sqrt()).collect();
        let y: Vec<f64> = (0..x.len())
            .map(|n| {
                let lag = if n > 0 { x[n - 1] } else { 0.0 };
                0.8 * x[n] + 0.3 * lag + 0.2 * x[n] * lag + 0.3 * (chi.sample(&mut rng) - 3.0) / 6f64.sqrt()
            })
            .collect();
        a.push(kernels_to_coefficients(&mmse_adapt(&x, &y, 2, 2, 0.0).unwrap().kernels));
        let report = moment_adapt(&x, &y, 2, 2, None, 0.0).unwrap();
        fallbacks += usize::from(report.method == AdaptationMethod::Mmse);
        b.push(kernels_to_coefficients(&report.kernels));
    }
    let k = a[0].len();
    let ratios: Vec<f64> = (1..k)
        .map(|j| {
            let va: Vec<f64> = a.iter().map(|c| c[j]).collect();
            let vb: Vec<f64> = b.iter().map(|c| c[j]).collect();
            variance(&vb) / variance(&va)
        })
        .collect();
    println!("var(moment)/var(mmse) per kernel entry, chi2 input and errors: {ratios:.3?} ({fallbacks}/200 fell back)");
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
}

fn detector(eps: f64) -> CusumDetector {
    let pre = Regime::gaussian(0.0, 1.0).unwrap();
    let post = Regime::gaussian(3.0, 1.0).unwrap();
    let score = build_polynomial_score(&pre, &post, 1).unwrap();
    CusumDetector::calibrated(score, eps, 1000, TailBound::Chebyshev).unwrap()
}

#[test]
fn quiet_streams_rarely_fire() {
    let d = detector(0.05);
    let normal = Distribution::Normal { mean: 0.0, sd: 1.0 };
    let quiet = (0..500u64)
        .filter(|&r| {
            let mut rng = ChaCha8Rng::seed_from_u64(474 ^ r);
            let s = sample_distribution(&normal, 1000, &mut rng).unwrap();
            d.first_alarm(&s).is_none()
        })
        .count();
    println!("H0, eps=0.05: {quiet}/500 runs without alarm");
    assert!(quiet as f64 >= 0.95 * 500.0);
}

#[test]
fn detection_delay_after_three_sigma_shift() {
    let d = detector(0.05);
    let pre = Distribution::Normal { mean: 0.0, sd: 1.0 };
    let post = Distribution::Normal { mean: 3.0, sd: 1.0 };
    let mut delays: Vec<f64> = (0..100u64)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(475 ^ r);
            let mut s = sample_distribution(&pre, 500, &mut rng).unwrap();
            s.extend(sample_distribution(&post, 100_000, &mut rng).unwrap());
            d.first_alarm(&s).map_or(f64::INFINITY, |tau| tau as f64 - 500.0)
        })
        .collect();
    delays.sort_by(f64::total_cmp);
    let median = delays[delays.len() / 2];
    // threshold over drift: the union-bound calibration dominates the delay
    let expected = d.threshold / d.score.post_mean;
    println!(
        "3-sigma shift, eps=0.05: threshold {:.0}, median delay {median:.0} samples (threshold / post-change drift = {expected:.0})",
        d.threshold
    );
    assert!(delays.iter().all(|v| *v > 0.0 && v.is_finite()));
    assert!((median - expected).abs() <= 0.05 * expected);
}

#[test]
fn detector_cost_is_linear_in_stream_length() {
    let d = detector(0.05);
    let normal = Distribution::Normal { mean: 0.0, sd: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let long = sample_distribution(&normal, 1_000_000, &mut rng).unwrap();
    let best = |len: usize| {
        (0..7)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(polymoment::changepoint::run_detector(&d, &long[..len]));
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (short, long_t) = (best(100_000), best(1_000_000));
    let factor = long_t / short;
    println!("detector time 1e5: {short:.2e} s, 1e6: {long_t:.2e} s, factor {factor:.2}");
    assert!(factor <= 15.0);
}
