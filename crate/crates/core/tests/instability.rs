use proptest::prelude::*;
use redatum_core::instability::*;

/// ‖φ_n‖²_{L²(Ω)} by composite Simpson in r on `(q, 1)`, exact in θ.
fn interior_norm_sq(n: usize, q: f64, theta1: f64) -> f64 {
    let panels = 4000;
    let h = (1.0 - q) / panels as f64;
    let f = |r: f64| r.powf(1.0 - 2.0 * n as f64);
    let mut acc = f(q) + f(1.0);
    for i in 1..panels {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(q + i as f64 * h);
    }
    2.0 * theta1 * acc * h / 3.0
}

/// Dirichlet H^k plus Neumann H^{k−1} norms on the arc, summed as norms.
fn boundary_norm(n: usize, k: usize, theta0: f64) -> f64 {
    let nf = n as f64;
    let arc = 2.0 * theta0;
    let d: f64 = (0..=k).map(|m| nf.powi(2 * m as i32)).sum::<f64>() * arc;
    let nn: f64 = (0..k).map(|m| nf.powi(2 * m as i32)).sum::<f64>() * nf * nf * arc;
    d.sqrt() + nn.sqrt()
}

#[test]
fn family_is_harmonic() {
    for n in [1, 3, 10] {
        let r = harmonic_residual(n, 0.95, 0.2, 1e-4);
        assert!(r < 1e-6, "n = {n}: {r}");
    }
    // a non-harmonic perturbation would not pass: r^{-n} cos(nθ) with the wrong power
    assert!(harmonic_residual(2, 0.95, 0.2, 1e-2) < 1e-3);
}

#[test]
fn boundary_trace_has_unit_modulus() {
    for n in [1, 7, 40] {
        for th in [-0.4, 0.0, 0.3] {
            let (c, s) = boundary_trace(n, th);
            assert!((c.hypot(s) - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn norms_match_quadrature() {
    let cfg = HadamardConfig::default();
    for n in [2, 10, 30, 60] {
        let p = evaluate_family(&cfg, n).unwrap();
        let want = interior_norm_sq(n, cfg.q(), cfg.theta1).sqrt();
        assert!((p.interior_norm() / want - 1.0).abs() < 1e-8, "n = {n}");
        let wb = boundary_norm(n, cfg.k, cfg.theta0);
        assert!((p.boundary_norm() / wb - 1.0).abs() < 1e-10, "n = {n}");
    }
}

#[test]
fn interior_growth_rate() {
    let cfg = HadamardConfig::default();
    let (fit, points) = fit_growth(&cfg).unwrap();
    assert_eq!(points.len(), cfg.n_max - 1);
    let want = -(1.0 - cfg.eps).ln();
    assert!((fit.slope_interior / want - 1.0).abs() < 0.05, "{}", fit.slope_interior);
    assert!((fit.log_correction + 0.5).abs() < 0.1, "{}", fit.log_correction);
    assert!(fit.slope_boundary_log <= cfg.k as f64 + 1.5);
    // threshold from the quadrature oracle
    let ratio = |n: usize| interior_norm_sq(n, cfg.q(), cfg.theta1).sqrt() / boundary_norm(n, cfg.k, cfg.theta0);
    let mut from = cfg.n_max;
    while from > 2 && ratio(from) > ratio(from - 1) {
        from -= 1;
    }
    assert_eq!(fit.monotone_from, Some(from));
    assert!(from <= 20, "{from}");
}

#[test]
fn large_orders_stay_finite() {
    let cfg = HadamardConfig {
        n_max: 200,
        ..Default::default()
    };
    let (fit, points) = fit_growth(&cfg).unwrap();
    assert!(points
        .iter()
        .all(|p| p.log_interior.is_finite() && p.log_boundary.is_finite()));
    assert!(fit.slope_interior.is_finite());
}

#[test]
fn invalid_configs_rejected() {
    let base = HadamardConfig::default();
    let bad = [
        HadamardConfig { theta1: 0.6, ..base },
        HadamardConfig {
            theta0: 1.6,
            theta1: 0.5,
            ..base
        },
        HadamardConfig { eps: 1.0, ..base },
        HadamardConfig { eps: 0.0, ..base },
        HadamardConfig { n_max: 2, ..base },
        HadamardConfig { k: 0, ..base },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    assert!(evaluate_family(&base, 0).is_err());
    assert!(evaluate_family(&base, base.n_max + 1).is_err());
    assert!(fit_points(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ratio_eventually_increases(eps in 0.05f64..0.5, k in 1usize..4, step in 0usize..40) {
        // past n ≈ (k + 1/2)/ε the interior gain e^ε per step beats (1 + 1/n)^k on the arc
        let n = (2.0 * (k as f64 + 1.0) / eps).ceil() as usize + step;
        let cfg = HadamardConfig { n_max: n + 1, eps, k, ..Default::default() };
        let a = evaluate_family(&cfg, n).unwrap();
        let b = evaluate_family(&cfg, n + 1).unwrap();
        prop_assert!(b.log_ratio() > a.log_ratio());
    }
}
