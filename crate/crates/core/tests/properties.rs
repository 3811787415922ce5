use nalgebra::{DMatrix, DVector};
use polymoment::changepoint::{build_polynomial_score, calibrate_threshold, cusum, Regime, TailBound};
use polymoment::moments::{cumulants_from_raw_moments, raw_moments_from_cumulants, sample_cumulants};
use polymoment::pmm::{variance_reduction_g2, variance_reduction_g3};
use polymoment::regression::Response;
use polymoment::signals::spectral_metrics;
use polymoment::sls::{sls_estimate, SlsProblem};
use polymoment::stochpoly::{basis_size, empirical_correlants, LagBasis};
use polymoment::volterra::{
    coefficients_to_kernels, kernels_to_coefficients, mmse_adapt, predict_flat, volterra_predict,
    VolterraKernels,
};
use polymoment::{CorrelantMatrix, CumulantSet, InitialMomentVector};
use proptest::collection::vec;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Realizable `(c2, c3, c4)`.
fn cumulants() -> impl Strategy<Value = CumulantSet> {
    (0.05..5.0f64, -2.5..2.5f64, 0.01..8.0f64).prop_map(|(c2, g3, slack)| {
        let g4 = g3 * g3 - 2.0 + slack;
        CumulantSet::new(c2, g3 * c2.powf(1.5), g4 * c2 * c2).unwrap()
    })
}

fn kernels(max_m: usize) -> impl Strategy<Value = VolterraKernels> {
    (1..=max_m).prop_flat_map(|m| {
        (
            -1.0..1.0f64,
            vec(-1.0..1.0f64, m),
            vec(-0.5..0.5f64, m * (m + 1) / 2),
        )
            .prop_map(move |(h0, h1, upper)| {
                let mut h2 = DMatrix::zeros(m, m);
                let mut it = upper.into_iter();
                for i in 0..m {
                    for j in i..m {
                        let v = it.next().unwrap();
                        h2[(i, j)] = v;
                        h2[(j, i)] = v;
                    }
                }
                VolterraKernels::from_matrix(h0, h1, &h2).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cumulants_survive_raw_moment_round_trip(c in cumulants(), mean in -4.0..4.0f64) {
        let alpha = raw_moments_from_cumulants(&c, mean, 4).unwrap();
        let (m, back) = cumulants_from_raw_moments(&alpha).unwrap();
        prop_assert!(close(m, mean, 1e-9));
        prop_assert!(close(back.c2(), c.c2(), 1e-9));
        prop_assert!(close(back.c3(), c.c3(), 1e-9));
        prop_assert!(close(back.c4(), c.c4(), 1e-9));
    }

    #[test]
    fn sixth_order_round_trip(c in cumulants(), c5 in -3.0..3.0f64, c6 in 0.0..20.0f64, mean in -2.0..2.0f64) {
        let c = c.with_higher(c5, c6).unwrap();
        let alpha = raw_moments_from_cumulants(&c, mean, 6).unwrap();
        let (m, back) = cumulants_from_raw_moments(&alpha).unwrap();
        prop_assert!(close(m, mean, 1e-8));
        for r in 2..=6 {
            prop_assert!(close(back.get(r).unwrap(), c.get(r).unwrap(), 1e-7), "order {}", r);
        }
    }

    #[test]
    fn sample_cumulants_shift_and_scale(sample in vec(-3.0..3.0f64, 20..80), shift in -5.0..5.0f64, scale in 0.2..3.0f64) {
        prop_assume!(sample.iter().any(|v| (v - sample[0]).abs() > 1e-3));
        let base = sample_cumulants(&sample, 4).unwrap();
        let moved: Vec<f64> = sample.iter().map(|v| scale * v + shift).collect();
        let c = sample_cumulants(&moved, 4).unwrap();
        prop_assert!(close(c.c2(), base.c2() * scale.powi(2), 1e-8));
        prop_assert!(close(c.c3(), base.c3() * scale.powi(3), 1e-7));
        prop_assert!(close(c.c4(), base.c4() * scale.powi(4), 1e-7));
    }

    #[test]
    fn correlant_matrix_is_positive_semidefinite(sample in vec(-2.0..2.0f64, 30..120), degree in 1usize..4) {
        prop_assume!(sample.iter().any(|v| (v - sample[0]).abs() > 1e-2));
        let alpha = InitialMomentVector::from_sample(&sample, 2 * degree).unwrap();
        if let Ok(f) = CorrelantMatrix::from_power_moments(degree, &alpha) {
            let norm = f.f().norm();
            prop_assert!(f.f().clone().symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10 * norm));
        }
    }

    #[test]
    fn lag_basis_gram_is_positive_semidefinite(signal in vec(-1.5..1.5f64, 60..200), m in 1usize..5) {
        let design = LagBasis::new(2, m).unwrap().design(&signal).unwrap();
        let (f, _) = empirical_correlants(&design).unwrap();
        let norm = f.norm();
        prop_assert!(f.symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10 * norm));
    }

    #[test]
    fn embedding_equivalence(k in kernels(6), signal in vec(-2.0..2.0f64, 6..60)) {
        let direct = volterra_predict(&k, &signal).unwrap();
        let flat = predict_flat(&kernels_to_coefficients(&k), k.memory(), &signal).unwrap();
        let scale = direct.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        prop_assert_eq!(direct.len(), flat.len());
        for (a, b) in direct.iter().zip(&flat) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn coefficients_round_trip(k in kernels(6)) {
        let back = coefficients_to_kernels(&kernels_to_coefficients(&k), k.m1(), k.m2()).unwrap();
        prop_assert!(back.is_symmetric());
        prop_assert!((back.h2_matrix() - k.h2_matrix()).amax() <= 1e-12);
        prop_assert!(close(back.h0(), k.h0(), 1e-12));
    }

    #[test]
    fn basis_size_formula(m in 1usize..=32) {
        prop_assert_eq!(basis_size(2, m), m + m * (m + 1) / 2);
        prop_assert_eq!(LagBasis::new(2, m).unwrap().len(), basis_size(2, m));
    }

    #[test]
    fn adapted_quadratic_kernel_is_symmetric(signal in vec(-1.0..1.0f64, 120..200), m in 1usize..4, a in -1.0..1.0f64) {
        let y: Vec<f64> = (0..signal.len())
            .map(|n| a * signal[n] + if n > 0 { 0.3 * signal[n] * signal[n - 1] } else { 0.0 })
            .collect();
        let r = mmse_adapt(&signal, &y, m, m, 1e-9).unwrap();
        prop_assert!(r.kernels.is_symmetric());
    }

    #[test]
    fn cusum_statistic_is_nonnegative(scores in vec(-3.0..3.0f64, 1..200), h in 0.1..10.0f64) {
        let rec = cusum(scores.iter().copied(), h);
        prop_assert!(rec.trace.iter().all(|&t| t >= 0.0));
        prop_assert_eq!(rec.trace.len(), scores.len());
        if let Some(tau) = rec.tau {
            prop_assert!(rec.trace[tau - 1] > h);
            prop_assert!(rec.trace[..tau - 1].iter().all(|&t| t <= h));
        }
    }

    #[test]
    fn thresholds_grow_as_epsilon_shrinks(shift in 0.5..4.0f64, horizon in 10usize..400) {
        let pre = Regime::gaussian(0.0, 1.0).unwrap();
        let post = Regime::gaussian(shift, 1.0).unwrap();
        let stats = build_polynomial_score(&pre, &post, 1).unwrap().stats();
        prop_assert!(stats.mean < 0.0);
        let mut last = 0.0;
        for eps in [0.2, 0.05, 0.01] {
            let h = calibrate_threshold(&stats, eps, horizon, TailBound::Chebyshev).unwrap();
            prop_assert!(h >= last);
            last = h;
        }
    }

    #[test]
    fn g2_lies_in_unit_interval(g3 in -3.0..3.0f64, slack in 0.01..10.0f64) {
        let g = variance_reduction_g2(g3, g3 * g3 - 2.0 + slack).unwrap();
        prop_assert!(g > 0.0 && g <= 1.0);
    }

    #[test]
    fn g3_lies_in_unit_interval(c4 in -1.9..5.0f64, c6 in 0.0..30.0f64) {
        let c = CumulantSet::from_cumulants(&[1.0, 0.0, c4, 0.0, c6]).unwrap();
        if let Ok(g) = variance_reduction_g3(&c) {
            prop_assert!(g > 0.0 && g <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sls_objective_never_increases(noise in vec(-1.0..1.0f64, 15..40), omega in 0.0..5.0f64, d0 in -0.3..0.3f64, d1 in -0.2..0.2f64) {
        let n = noise.len();
        let x = DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |r, _| 2.0 * (0.5 * x[(r, 0)]).exp() + noise[r]);
        let problem = SlsProblem::new(&x, &y, Response::Exponential, omega).unwrap();
        let init = [2.0 + d0, 0.5 + d1];
        if let Ok(est) = sls_estimate(&problem, &init) {
            prop_assert!(est.objective <= problem.profiled_objective(&init).unwrap().0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn effective_width_is_scale_invariant(seed in any::<u64>(), scale in 0.01..100.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
        let a = spectral_metrics(&s, 1000.0).unwrap().effective_width;
        let b = spectral_metrics(&scaled, 1000.0).unwrap().effective_width;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}
