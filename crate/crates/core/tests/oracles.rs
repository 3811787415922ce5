//! Estimators checked against brute-force and closed-form oracles.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use polymoment::moments::analytic_cumulants;
use polymoment::pmm::{optimal_coefficients, pmm2_estimate_location, pmm3_estimate_location, LocationModel};
use polymoment::regression::Response;
use polymoment::sls::{optimal_weights, sls_estimate, SlsProblem};
use polymoment::volterra::{kernels_to_coefficients, mmse_adapt, moment_adapt, predict_flat};
use polymoment::{CumulantSet, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution as _, StandardNormal};

/// Noise central moments `mu_0..mu_{2S}` from cumulants up to order 6.
fn central_moments(c: &CumulantSet) -> [f64; 7] {
    let (c2, c3, c4) = (c.c2(), c.c3(), c.c4());
    let c5 = c.c5().unwrap_or(0.0);
    let c6 = c.c6().unwrap_or(0.0);
    [
        1.0,
        0.0,
        c2,
        c3,
        c4 + 3.0 * c2 * c2,
        c5 + 10.0 * c3 * c2,
        c6 + 15.0 * c4 * c2 + 10.0 * c3 * c3 + 15.0 * c2.powi(3),
    ]
}

/// PMM estimating function for a location parameter: `F h = d alpha / d theta`
/// solved by Cramer's rule, then `sum_v sum_i h_i (x_v^i - alpha_i)`.
fn location_equation(sample: &[f64], theta: f64, degree: usize, mu: &[f64; 7]) -> f64 {
    let binom = |n: usize, k: usize| (0..k).fold(1.0, |a, i| a * (n - i) as f64 / (i + 1) as f64);
    let alpha: Vec<f64> = (0..=2 * degree)
        .map(|i| (0..=i).map(|k| binom(i, k) * theta.powi((i - k) as i32) * mu[k]).sum())
        .collect();
    let mut f = Matrix3::identity();
    let mut d = Vector3::zeros();
    for i in 1..=degree {
        d[i - 1] = i as f64 * alpha[i - 1];
        for j in 1..=degree {
            f[(i - 1, j - 1)] = alpha[i + j] - alpha[i] * alpha[j];
        }
    }
    let det = f.determinant();
    let h: Vec<f64> = (0..degree)
        .map(|c| {
            let mut fc = f;
            fc.set_column(c, &d);
            fc.determinant() / det
        })
        .collect();
    sample
        .iter()
        .map(|x| {
            let mut p = 1.0;
            let mut acc = 0.0;
            for i in 1..=degree {
                p *= x;
                acc += h[i - 1] * (p - alpha[i]);
            }
            acc
        })
        .sum()
}

/// Grid point with the smallest `|f|`.
fn grid_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let steps = ((hi - lo) / step).ceil() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let t = lo + step * i as f64;
        let v = f(t).abs();
        if v < best.0 {
            best = (v, t);
        }
    }
    best.1
}

#[test]
fn pmm2_location_matches_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let chi = ChiSquared::new(3.0).unwrap();
    let sample: Vec<f64> = (0..200).map(|_| 5.0 + chi.sample(&mut rng) - 3.0).collect();
    let c = analytic_cumulants(&Distribution::ChiSquare { k: 3.0 }).unwrap();
    let est = pmm2_estimate_location(&sample, &c).unwrap().theta_hat[0];
    let mu = central_moments(&c);
    let mean = sample.iter().sum::<f64>() / 200.0;
    let root = grid_root(|t| location_equation(&sample, t, 2, &mu), mean - 0.5, mean + 0.5, 1e-6);
    assert!((est - root).abs() <= 1e-4, "pmm2 {est} vs grid {root}");
}

#[test]
fn pmm3_location_matches_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(239);
    let sample: Vec<f64> = (0..400).map(|_| -1.0 + rng.random_range(0.0..1.0f64)).collect();
    let c = analytic_cumulants(&Distribution::Uniform { a: 0.0, b: 1.0 }).unwrap();
    let est = pmm3_estimate_location(&sample, &c).unwrap().theta_hat[0];
    let mu = central_moments(&c);
    let root = grid_root(|t| location_equation(&sample, t, 3, &mu), -0.6, -0.4, 1e-6);
    assert!((est - root).abs() <= 1e-4, "pmm3 {est} vs grid {root}");
}

#[test]
fn location_coefficients_match_cramer() {
    let c = analytic_cumulants(&Distribution::ChiSquare { k: 3.0 }).unwrap();
    let model = LocationModel::new(2, c).unwrap();
    for theta in [-2.0, 0.0, 1.5] {
        let h = optimal_coefficients(&model, &[theta]).unwrap();
        let mu = central_moments(&c);
        let a1 = theta;
        let a2 = theta * theta + mu[2];
        let a3 = theta.powi(3) + 3.0 * theta * mu[2] + mu[3];
        let a4 = theta.powi(4) + 6.0 * theta * theta * mu[2] + 4.0 * theta * mu[3] + mu[4];
        let f = Matrix2::new(a2 - a1 * a1, a3 - a1 * a2, a3 - a1 * a2, a4 - a2 * a2);
        let d = Vector2::new(1.0, 2.0 * theta);
        let det = f.determinant();
        let h1 = (d[0] * f[(1, 1)] - f[(0, 1)] * d[1]) / det;
        let h2 = (f[(0, 0)] * d[1] - f[(1, 0)] * d[0]) / det;
        assert!((h[(0, 0)] - h1).abs() <= 1e-12 * h1.abs().max(1.0));
        assert!((h[(1, 0)] - h2).abs() <= 1e-12 * h2.abs().max(1.0));
        let residual = f * Vector2::new(h[(0, 0)], h[(1, 0)]) - d;
        assert!(residual.amax() <= 1e-12 * f.amax());
    }
}

fn exponential_data(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(3.0).unwrap();
    let x = DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64);
    let y = DVector::from_fn(n, |r, _| 2.0 * (0.5 * x[(r, 0)]).exp() + chi.sample(&mut rng) - 3.0);
    (x, y)
}

/// Nested 2-D grid search; returns the minimiser and the final grid step.
fn grid_minimum(f: impl Fn(f64, f64) -> f64, centre: (f64, f64), half: f64, levels: usize) -> ((f64, f64), f64) {
    let (mut c, mut half) = (centre, half);
    let mut step = 0.0;
    for _ in 0..levels {
        let n = 80;
        step = 2.0 * half / n as f64;
        let mut best = (f64::INFINITY, c);
        for i in 0..=n {
            for j in 0..=n {
                let p = (c.0 - half + step * i as f64, c.1 - half + step * j as f64);
                let v = f(p.0, p.1);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
        c = best.1;
        half = 2.0 * step;
    }
    (c, step)
}

#[test]
fn sls_matches_two_dimensional_grid() {
    let (x, y) = exponential_data(100, 282);
    for omega in [0.0, 0.02, 0.5] {
        let problem = SlsProblem::new(&x, &y, Response::Exponential, omega).unwrap();
        let est = sls_estimate(&problem, &[2.0, 0.5]).unwrap();
        let (best, step) = grid_minimum(|a, b| problem.profiled_objective(&[a, b]).unwrap().0, (2.0, 0.5), 2.0, 4);
        assert!((est.theta[0] - best.0).abs() <= step, "omega {omega}: {:?} vs {best:?}", est.theta);
        assert!((est.theta[1] - best.1).abs() <= step, "omega {omega}: {:?} vs {best:?}", est.theta);
    }
}

#[test]
fn weighted_sls_matches_two_dimensional_grid() {
    let (x, y) = exponential_data(100, 283);
    let c = analytic_cumulants(&Distribution::ChiSquare { k: 3.0 }).unwrap();
    let w = optimal_weights(&c, Response::Exponential, &x, &[2.0, 0.5]).unwrap();
    let problem = SlsProblem::with_weights(&x, &y, Response::Exponential, &w).unwrap();
    let est = sls_estimate(&problem, &[2.0, 0.5]).unwrap();
    let (best, step) = grid_minimum(|a, b| problem.profiled_objective(&[a, b]).unwrap().0, (2.0, 0.5), 2.0, 4);
    assert!((est.theta[0] - best.0).abs() <= step);
    assert!((est.theta[1] - best.1).abs() <= step);
}

#[test]
fn profiled_variance_matches_one_dimensional_grid() {
    let (x, y) = exponential_data(60, 5);
    let problem = SlsProblem::new(&x, &y, Response::Exponential, 0.3).unwrap();
    let theta = [2.1, 0.45];
    let (_, s2) = problem.profiled_objective(&theta).unwrap();
    let grid = grid_root(
        |s| {
            let h = 1e-4;
            problem.objective(&theta, s + h).unwrap() - problem.objective(&theta, s - h).unwrap()
        },
        s2 - 2.0,
        s2 + 2.0,
        1e-4,
    );
    assert!((grid - s2).abs() <= 2e-4);
}

#[test]
fn mmse_solution_is_a_strict_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..600).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = (0..x.len())
        .map(|n| {
            let lag = if n > 0 { x[n - 1] } else { 0.0 };
            0.7 * x[n] - 0.2 * lag + 0.4 * x[n] * lag + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let report = mmse_adapt(&x, &y, 2, 2, 0.0).unwrap();
    let coeffs = kernels_to_coefficients(&report.kernels);
    let mse = |c: &[f64]| {
        let pred = predict_flat(c, 2, &x).unwrap();
        pred.iter().zip(&y[1..]).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
    };
    let base = mse(&coeffs);
    assert!((base - report.residual_mse).abs() <= 1e-12 * base.max(1.0));
    for i in 0..coeffs.len() {
        for d in [-1e-3, 1e-3] {
            let mut c = coeffs.clone();
            c[i] += d;
            assert!(mse(&c) > base, "coefficient {i} step {d}");
        }
    }
    let zero = vec![0.0; coeffs.len()];
    assert!(base <= mse(&zero));
}

#[test]
fn moment_adaptation_with_gaussian_shape_is_mmse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = (0..x.len())
        .map(|n| {
            let lag = if n > 0 { x[n - 1] } else { 0.0 };
            0.5 * x[n] + 0.3 * x[n] * lag + 0.2 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let gaussian = CumulantSet::new(0.04, 0.0, 0.0).unwrap();
    let a = mmse_adapt(&x, &y, 3, 3, 0.0).unwrap();
    let b = moment_adapt(&x, &y, 3, 3, Some(&gaussian), 0.0).unwrap();
    let ca = kernels_to_coefficients(&a.kernels);
    let cb = kernels_to_coefficients(&b.kernels);
    for (p, q) in ca.iter().zip(&cb) {
        assert!((p - q).abs() <= 1e-8, "{p} vs {q}");
    }
}
