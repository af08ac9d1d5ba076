mod common;

use ndarray::Array2;
use proptest::prelude::*;
use redatum_core::domain::*;

fn constant_spec(r: f64) -> DomainSpec {
    DomainSpec {
        known_radius: r,
        ..common::small_spec()
    }
}

#[test]
fn linear_depth_values() {
    let spec = DomainSpec::desk();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let g = c.grid;
    let ix = g.nearest_column(0.0);
    assert_eq!(c.at(0, ix), 1.0);
    assert!((c.at(g.ny - 1, ix) - 2.0).abs() < 1e-12);
}

#[test]
fn constant_model_is_uniform() {
    let c = build_wavespeed(&common::small_spec(), "constant").unwrap();
    assert!(c.values.iter().all(|&v| v == 1.0));
    let c = build_wavespeed(&common::small_spec(), "constant:1.5").unwrap();
    assert!(c.values.iter().all(|&v| v == 1.5));
}

#[test]
fn unknown_model_rejected() {
    let e = build_wavespeed(&common::small_spec(), "granite");
    assert!(matches!(e, Err(redatum_core::Error::UnknownModel(_))));
}

#[test]
fn invalid_specs_rejected() {
    let mut s = common::small_spec();
    s.gamma_half_width = 3.5;
    assert!(s.validate().is_err());
    let mut s = common::small_spec();
    s.nx = 2;
    assert!(s.validate().is_err());
    let mut s = common::small_spec();
    s.known_radius = 1.5;
    assert!(s.validate().is_err());
}

#[test]
fn wavespeed_file_round_trip_and_rejects_nonpositive() {
    let spec = common::small_spec();
    let dir = std::env::temp_dir().join(format!("redatum-domain-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("c.wsgrid");
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    c.save(&path).unwrap();
    let back = build_wavespeed(&spec, path.to_str().unwrap()).unwrap();
    assert_eq!(back.values, c.values);

    let mut bad = c.clone();
    bad.values[[3, 4]] = -1.0;
    bad.save(&path).unwrap();
    assert!(matches!(
        WavespeedField::load(&path),
        Err(redatum_core::Error::InvalidWavespeed { .. })
    ));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn travel_depth_half_radius() {
    let c = build_wavespeed(&DomainSpec::desk(), "linear-depth").unwrap();
    let d = travel_time_depth(&c, 0.5, 0.0);
    assert!(!d.clamped);
    assert!((d.depth - 0.6487).abs() < 1e-4, "{}", d.depth);
}

#[test]
fn travel_depth_zero_radius() {
    let c = build_wavespeed(&common::small_spec(), "linear-depth").unwrap();
    assert_eq!(travel_time_depth(&c, 0.0, 0.3).depth, 0.0);
}

/// Depth reached after time `r` by integrating dy/dt = c(y) = 1 + y with RK4.
fn depth_by_ode(r: f64, steps: usize) -> f64 {
    let h = r / steps as f64;
    let f = |y: f64| 1.0 + y;
    let mut y = 0.0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    }
    y
}

#[test]
fn travel_depth_quarter_radius_matches_ode() {
    let (coarse, fine) = (depth_by_ode(0.25, 100), depth_by_ode(0.25, 200));
    assert!((coarse - fine).abs() < 1e-10);
    let c = build_wavespeed(&DomainSpec::desk(), "linear-depth").unwrap();
    let d = travel_time_depth(&c, 0.25, 1.0).depth;
    assert!((d - fine).abs() < 1e-9, "{d} vs {fine}");
    assert!((d - (0.25f64.exp() - 1.0)).abs() < 1e-9);
}

#[test]
fn travel_depth_clamps_at_bottom() {
    let c = build_wavespeed(&common::small_spec(), "linear-depth").unwrap();
    let d = travel_time_depth(&c, 5.0, 0.0);
    assert!(d.clamped);
    assert_eq!(d.depth, 1.0);
}

#[test]
fn zero_radius_distance_marks_only_the_segment() {
    let spec = common::small_spec();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let g = c.grid;
    let d = travel_time_distance(&c, spec.gamma_half_width);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let on_gamma = iy == 0 && g.x(ix).abs() <= spec.gamma_half_width + 1e-9;
            assert_eq!(d[g.index(iy, ix)] <= 0.0, on_gamma);
        }
    }
}

#[test]
fn mask_depth_at_centre() {
    let spec = DomainSpec::desk();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let m = known_region_mask(&spec, &c).unwrap();
    let d = m.depth_at(0.0).unwrap();
    assert!((d - 0.649).abs() <= c.grid.hy + 1e-12, "{d}");
}

/// Euclidean distance from `(x, y)` to the segment `[-l, l] x {0}`.
fn distance_to_segment(x: f64, y: f64, l: f64) -> f64 {
    let dx = (x.abs() - l).max(0.0);
    dx.hypot(y)
}

#[test]
fn constant_mask_matches_euclidean_distance() {
    let spec = constant_spec(0.3);
    let c = build_wavespeed(&spec, "constant").unwrap();
    let m = known_region_mask(&spec, &c).unwrap();
    let g = c.grid;
    let ix = g.nearest_column(0.0);
    assert!(distance_to_segment(0.0, -0.2, 0.6) < 0.3);
    assert!(m.contains(g.row_of(0.2).unwrap(), ix));
    assert!(distance_to_segment(0.0, -0.4, 0.6) > 0.3);
    assert!(!m.contains(g.row_of(0.4).unwrap(), ix));
}

#[test]
fn inner_product_of_zero_is_zero() {
    let spec = common::small_spec();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let m = known_region_mask(&spec, &c).unwrap();
    let z = Array2::zeros((c.grid.ny, c.grid.nx));
    assert_eq!(inner_product_interior(&z, &z, &c, &m), 0.0);
}

/// Mask of grid nodes with `x0 <= x <= x1` and depth `<= d`.
fn rectangle(g: Grid, x0: f64, x1: f64, d: f64) -> RegionMask {
    let mut m = RegionMask::full(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let x = g.x(ix);
            let inside = x >= x0 - 1e-9 && x <= x1 + 1e-9 && (iy as f64) * g.hy <= d + 1e-9;
            m.inside[g.index(iy, ix)] = inside;
        }
    }
    m
}

#[test]
fn unit_field_on_rectangle_gives_area() {
    let spec = common::small_spec();
    let c = build_wavespeed(&spec, "constant").unwrap();
    let m = rectangle(c.grid, -0.5, 1.0, 0.5);
    let one = Array2::from_elem((c.grid.ny, c.grid.nx), 1.0);
    let area = inner_product_interior(&one, &one, &c, &m);
    assert!((area - 0.75).abs() < 1e-12, "{area}");
}

/// Trapezoid rule for ∫_0^d (1 + s)^{-2} ds on `n` panels, refined until stable.
fn refined_depth_integral(d: f64) -> f64 {
    let trap = |n: usize| {
        let h = d / n as f64;
        let f = |s: f64| 1.0 / ((1.0 + s) * (1.0 + s));
        let mut acc = 0.5 * (f(0.0) + f(d));
        for k in 1..n {
            acc += f(k as f64 * h);
        }
        acc * h
    };
    let mut n = 8;
    let mut prev = trap(n);
    loop {
        n *= 2;
        let next = trap(n);
        if (next - prev).abs() < 1e-12 {
            return next;
        }
        prev = next;
    }
}

#[test]
fn metric_area_on_linear_depth() {
    let spec = DomainSpec {
        ny: 161,
        nx: 241,
        ..common::small_spec()
    };
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let m = rectangle(c.grid, 0.0, 1.0, 0.5);
    let one = Array2::from_elem((c.grid.ny, c.grid.nx), 1.0);
    let got = inner_product_interior(&one, &one, &c, &m);
    let oracle = refined_depth_integral(0.5);
    assert!((got - oracle).abs() < 1e-4 * oracle, "{got} vs {oracle}");
}

#[test]
fn extended_medium_agrees_on_mask() {
    let spec = common::small_spec();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let m = known_region_mask(&spec, &c).unwrap();
    let e = extend_known(&c, &m);
    let g = c.grid;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            if m.contains(iy, ix) {
                assert_eq!(e.at(iy, ix), c.at(iy, ix));
            }
        }
    }
    e.validate().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn travel_depth_monotone(r1 in 0.0f64..0.4, dr in 0.0f64..0.25, x in -2.0f64..2.0) {
        let c = build_wavespeed(&common::small_spec(), "linear-depth").unwrap();
        let a = travel_time_depth(&c, r1, x).depth;
        let b = travel_time_depth(&c, r1 + dr, x).depth;
        prop_assert!(a <= b + 1e-15);
        prop_assert!((a - (r1.exp() - 1.0)).abs() < 10.0 * c.grid.hy);
    }

    #[test]
    fn masks_nest(r1 in 0.05f64..0.4, dr in 0.0f64..0.25) {
        let c = build_wavespeed(&common::small_spec(), "linear-depth").unwrap();
        let a = known_region_mask(&constant_spec(r1), &c).unwrap();
        let b = known_region_mask(&constant_spec(r1 + dr), &c).unwrap();
        prop_assert!(a.inside.iter().zip(&b.inside).all(|(&p, &q)| !p || q));
    }

    #[test]
    fn inner_product_symmetric_bilinear_positive(seed in 0u64..1000, s in -2.0f64..2.0) {
        use rand::{Rng, SeedableRng};
        let spec = common::small_spec();
        let c = build_wavespeed(&spec, "linear-depth").unwrap();
        let m = known_region_mask(&spec, &c).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = (c.grid.ny, c.grid.nx);
        let mut rand_field = || Array2::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
        let (u, v, w) = (rand_field(), rand_field(), rand_field());
        let ip = |a: &Array2<f64>, b: &Array2<f64>| inner_product_interior(a, b, &c, &m);
        prop_assert!((ip(&u, &v) - ip(&v, &u)).abs() < 1e-12 * ip(&u, &u).max(1.0));
        let lin = ip(&(&u * s + &w), &v);
        prop_assert!((lin - (s * ip(&u, &v) + ip(&w, &v))).abs() < 1e-10);
        prop_assert!(ip(&u, &u) > 0.0);
    }
}
