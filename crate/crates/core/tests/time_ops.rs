mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use redatum_core::basis::GramMatrix;
use redatum_core::signal::{trapezoid_weights, BoundarySignal};
use redatum_core::time_ops::*;
use redatum_core::Error;

const DT: f64 = 0.01;

fn signal(tau: f64, f: impl Fn(f64, f64) -> f64) -> BoundarySignal {
    let nt = (tau / DT).round() as usize + 1;
    BoundarySignal::from_fn(DT, -0.2, 0.1, nt, 5, f)
}

fn random_signal(tau: f64, seed: u64) -> BoundarySignal {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut s = signal(tau, |_, _| 0.0);
    s.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    s
}

/// Trapezoid pairing in time, plain sum over the channels.
fn pair(a: &BoundarySignal, b: &BoundarySignal) -> f64 {
    let w = trapezoid_weights(a.nt(), a.dt);
    let mut s = 0.0;
    for l in 0..a.nt() {
        for k in 0..a.nx() {
            s += w[l] * a.data[[l, k]] * b.data[[l, k]];
        }
    }
    s
}

fn max_diff(a: &BoundarySignal, b: &BoundarySignal) -> f64 {
    assert_eq!(a.data.dim(), b.data.dim());
    a.data
        .iter()
        .zip(b.data.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn reversal_of_affine_ramp() {
    let f = signal(2.0, |t, _| t);
    let r = time_reverse(&f, 2.0).unwrap();
    for l in 0..r.nt() {
        assert!((r.data[[l, 2]] - (2.0 - r.t(l))).abs() < 1e-12);
    }
}

#[test]
fn reversal_is_an_involution() {
    let f = random_signal(1.0, 3);
    let rr = time_reverse(&time_reverse(&f, 1.0).unwrap(), 1.0).unwrap();
    assert_eq!(rr, f);
}

#[test]
fn reversal_requires_matching_duration() {
    let f = random_signal(1.0, 4);
    assert!(matches!(time_reverse(&f, 0.8), Err(Error::ShapeMismatch(_))));
}

#[test]
fn reversal_moves_pulse_centre() {
    let s = common::small();
    let pulse = |tc: f64| move |t: f64, x: f64| (-350.0 * ((t - tc).powi(2) + x * x)).exp();
    let f = redatum_core::redatum::sample_boundary(&s.rec, 1.0, pulse(0.3)).unwrap();
    let g = redatum_core::redatum::sample_boundary(&s.rec, 1.0, pulse(0.7)).unwrap();
    let r = time_reverse(&f, 1.0).unwrap();
    assert!(max_diff(&r, &g) < 1e-12);
}

#[test]
fn filter_of_constant() {
    let tau = 1.0;
    let j = time_filter(&signal(2.0 * tau, |_, _| 1.0), tau).unwrap();
    assert_eq!(j.nt(), 101);
    for l in 0..j.nt() {
        assert!((j.data[[l, 0]] - (tau - j.t(l))).abs() < 1e-8);
    }
}

#[test]
fn filter_of_zero() {
    let j = time_filter(&signal(2.0, |_, _| 0.0), 1.0).unwrap();
    assert!(j.data.iter().all(|&v| v == 0.0));
}

#[test]
fn filter_of_ramp_matches_antiderivative() {
    let tau = 1.0;
    let j = time_filter(&signal(2.0 * tau, |t, _| t), tau).unwrap();
    // ½ ∫_t^{2τ−t} s ds = ((2τ − t)² − t²)/4 = τ(τ − t)
    for &t in &[0.0, 0.13, 0.5, 0.77, 1.0] {
        let l = (t / DT).round() as usize;
        let exact = ((2.0 * tau - t).powi(2) - t * t) / 4.0;
        assert!((exact - tau * (tau - t)).abs() < 1e-14);
        assert!((j.data[[l, 3]] - exact).abs() < 1e-12, "t = {t}");
    }
}

#[test]
fn filter_rejects_short_signal() {
    let f = signal(1.5, |_, _| 1.0);
    assert!(matches!(time_filter(&f, 1.0), Err(Error::SignalTooShort { .. })));
}

#[test]
fn restriction_undoes_zero_extension() {
    let f = random_signal(1.0, 5);
    let e = zero_extend(&f, 1.0).unwrap();
    assert_eq!(e.nt(), 201);
    assert!(e.data.slice(ndarray::s![101.., ..]).iter().all(|&v| v == 0.0));
    assert_eq!(restrict(&e, 1.0).unwrap(), f);
}

#[test]
fn filter_of_zero_extension_is_tail_integral() {
    // (J Θ f)(t) = ½ ∫_t^τ f for f supported in [0, τ]; with f ≡ 1 that is (τ − t)/2.
    let tau = 1.0;
    let jf = time_filter(&zero_extend(&signal(tau, |_, _| 1.0), tau).unwrap(), tau).unwrap();
    for l in 0..jf.nt() {
        let t = jf.t(l);
        // the jump at τ is sampled, so the last panel carries half its value
        let exact = if l + 1 == jf.nt() {
            0.0
        } else {
            0.5 * (tau - t) + 0.25 * DT
        };
        assert!((jf.data[[l, 1]] - exact).abs() < 1e-12, "l = {l}");
    }
}

#[test]
fn reversed_filter_of_ramp() {
    // (R J Θ f)(t) = ½ ∫_{τ−t}^{τ} s ds for f(s) = s, plus the half panel at the jump.
    let tau = 1.0;
    let f = signal(tau, |t, _| t);
    let rj = time_reverse(&time_filter(&zero_extend(&f, tau).unwrap(), tau).unwrap(), tau).unwrap();
    for l in 1..rj.nt() {
        let t = rj.t(l);
        let exact = 0.25 * (tau * tau - (tau - t).powi(2)) + 0.25 * DT * tau;
        assert!((rj.data[[l, 0]] - exact).abs() < 1e-12, "l = {l}");
    }
    assert_eq!(rj.data[[0, 0]], 0.0);
}

#[test]
fn delay_by_zero_is_identity() {
    let f = random_signal(1.0, 6);
    assert_eq!(delay(&f, 0.0).unwrap(), f);
}

#[test]
fn delay_shifts_and_zero_fills() {
    let f = random_signal(1.0, 7);
    let z = delay(&f, 0.25).unwrap();
    for l in 0..f.nt() {
        for k in 0..f.nx() {
            let want = if l < 25 { 0.0 } else { f.data[[l - 25, k]] };
            assert_eq!(z.data[[l, k]], want);
        }
    }
}

#[test]
fn misaligned_delay_rejected() {
    let f = random_signal(1.0, 8);
    assert!(matches!(delay(&f, 0.015), Err(Error::MisalignedShift { .. })));
    assert!(delay(&f, -0.1).is_err());
}

#[test]
fn window_bounds_checked() {
    assert!(SignalWindow::new(0.5, 0.4, 1.0).is_err());
    assert!(SignalWindow::new(0.2, 1.2, 1.0).is_err());
    let w = SignalWindow::last(0.3, 1.0).unwrap();
    assert!((w.start - 0.7).abs() < 1e-15 && w.end == 1.0);
}

#[test]
fn window_keeps_half_open_interval() {
    let f = signal(1.0, |_, _| 1.0);
    let p = window_project(&f, &SignalWindow::new(0.3, 0.6, 1.0).unwrap()).unwrap();
    for l in 0..p.nt() {
        let inside = l > 30 && l <= 60;
        assert_eq!(p.data[[l, 0]], if inside { 1.0 } else { 0.0 });
    }
}

#[test]
fn coefficient_delay_matches_signal_delay() {
    let s = common::small();
    let g: GramMatrix = s.gram(1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    // pulses 2..=4 are uncut and stay uncut after two spacings
    let mut c = DVector::zeros(g.dim());
    for i in 2..=4 {
        for j in 0..g.nx {
            c[g.index(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    assert!(!g.basis.cut_at_zero(2) && !g.basis.cut_at(6, 1.0));
    let f = g.reconstruct(&c);
    let z = delay(&f, 2.0 * g.basis.dt).unwrap();
    let got = g.project(&z).unwrap();
    let want = shift_coefficients(&c, g.nt, g.nx, 2);
    let err = (&got - &want).amax();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn coefficient_reversal_matches_signal_reversal() {
    let s = common::small();
    let g = s.gram(1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
    let mut c = DVector::zeros(g.dim());
    for i in 2..=6 {
        for j in 0..g.nx {
            c[g.index(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let r = time_reverse(&g.reconstruct(&c), 1.0).unwrap();
    let got = g.project(&r).unwrap();
    let want = reverse_coefficients(&c, g.nt, g.nx);
    assert!((&got - &want).amax() < 1e-8);
}

#[test]
fn unit_basis_shift_is_exact() {
    let c = DVector::from_fn(12, |m, _| m as f64);
    let z = shift_coefficients(&c, 4, 3, 1);
    for i in 0..4 {
        for j in 0..3 {
            let want = if i == 0 { 0.0 } else { c[(i - 1) * 3 + j] };
            assert_eq!(z[i * 3 + j], want);
        }
    }
    assert_eq!(reverse_coefficients(&reverse_coefficients(&c, 4, 3), 4, 3), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reversal_is_isometric(a in 0u64..10_000, b in 0u64..10_000) {
        let (f, g) = (random_signal(1.0, a), random_signal(1.0, b));
        let rf = time_reverse(&f, 1.0).unwrap();
        let rg = time_reverse(&g, 1.0).unwrap();
        prop_assert!((pair(&rf, &rg) - pair(&f, &g)).abs() < 1e-12);
    }

    #[test]
    fn window_projection_is_orthogonal(
        a in 0u64..10_000,
        b in 0u64..10_000,
        lo in 0usize..50,
        len in 1usize..50,
    ) {
        let w = SignalWindow::new(lo as f64 * DT, (lo + len) as f64 * DT, 1.0).unwrap();
        let (f, g) = (random_signal(1.0, a), random_signal(1.0, b));
        let pf = window_project(&f, &w).unwrap();
        prop_assert_eq!(&window_project(&pf, &w).unwrap(), &pf);
        let pg = window_project(&g, &w).unwrap();
        prop_assert!((pair(&pf, &g) - pair(&f, &pg)).abs() < 1e-12);
    }

    #[test]
    fn delay_composes(a in 0u64..10_000, s1 in 0usize..30, s2 in 0usize..30) {
        let f = random_signal(1.0, a);
        let once = delay(&f, (s1 + s2) as f64 * DT).unwrap();
        let twice = delay(&delay(&f, s1 as f64 * DT).unwrap(), s2 as f64 * DT).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn filter_is_linear(a in 0u64..10_000, b in 0u64..10_000, s in -3.0f64..3.0) {
        let (f, g) = (random_signal(2.0, a), random_signal(2.0, b));
        let mut h = f.clone();
        h.data = &f.data * s + &g.data;
        let jh = time_filter(&h, 1.0).unwrap();
        let jf = time_filter(&f, 1.0).unwrap();
        let jg = time_filter(&g, 1.0).unwrap();
        let mut want = jf.clone();
        want.data = &jf.data * s + &jg.data;
        prop_assert!(max_diff(&jh, &want) < 1e-12);
    }
}
