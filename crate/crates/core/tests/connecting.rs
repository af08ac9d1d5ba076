mod common;

use std::sync::OnceLock;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use redatum_core::basis::GramMatrix;
use redatum_core::connecting::*;
use redatum_core::domain::{inner_product_interior, RegionMask};
use redatum_core::wave_sim::{stable_step, OutputRequest, WaveSolver};

struct Fixture {
    s: common::Small,
    data: NtdDataset,
    g: GramMatrix,
    k: ConnectingMatrix,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let s = common::small();
        let tau = s.spec.final_time;
        let data = simulate_ntd(&s.spec, &s.basis, &s.rec, &s.c, &[tau], Strategy::Auto).unwrap();
        let g = s.gram(tau);
        let k = assemble_k(&data, &g, AssembleOptions::default()).unwrap();
        Fixture { s, data, g, k }
    })
}

fn random(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn laterally_uniform_medium_uses_translation() {
    assert_eq!(fixture().data.manifest.layout, Layout::Translation);
}

#[test]
fn translation_layout_matches_per_position_simulation() {
    let f = fixture();
    let tau = f.s.spec.final_time;
    let per = simulate_ntd(&f.s.spec, &f.s.basis, &f.s.rec, &f.s.c, &[tau], Strategy::PerPosition).unwrap();
    for &(i, j) in &[(0, 0), (3, 2), (8, 6)] {
        let a = f.data.trace_of(i, j, &f.g).unwrap();
        let b = per.trace_of(i, j, &f.g).unwrap();
        let peak = b.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = (&a.data - &b.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10 * peak, "({i}, {j}): {err}");
    }
}

#[test]
fn traces_respect_travel_time() {
    let f = fixture();
    let (i, j) = (2, 0);
    let tr = f.data.trace_of(i, j, &f.g).unwrap();
    let peak = tr.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let b = &f.s.basis;
    // surface speed is one; the pulse starts to matter at t_c - reach_t and spans reach_x
    let start = b.t_center(i) - b.reach_t();
    for (k, x) in tr.positions().iter().enumerate() {
        let dist = (x - b.x_center(j)).abs() - b.reach_x();
        for l in 0..tr.nt() {
            if tr.t(l) < start + dist - 0.05 {
                assert!(tr.data[[l, k]].abs() < 1e-6 * peak, "x = {x}, t = {}", tr.t(l));
            }
        }
    }
}

/// `½ ∫_{τ−t}^{τ} φ(s) ds` by the trapezoid rule on the receiver samples,
/// with the half panel where the zero extension jumps.
fn rj_by_hand(p: &redatum_core::signal::BoundarySignal) -> redatum_core::signal::BoundarySignal {
    let mut out = p.clone();
    let (nt, nx) = p.data.dim();
    let dt = p.dt;
    for k in 0..nx {
        for l in 0..nt {
            // ½ ∫_{τ−t_l}^{τ}: nodes nt-1-l ..= nt-1, last node carries the jump
            let lo = nt - 1 - l;
            let mut acc = 0.0;
            for m in lo..nt - 1 {
                acc += 0.5 * dt * (p.data[[m, k]] + p.data[[m + 1, k]]);
            }
            if l > 0 {
                acc += 0.5 * dt * p.data[[nt - 1, k]];
            }
            out.data[[l, k]] = 0.5 * acc;
        }
    }
    out
}

#[test]
fn reversed_filter_matrix_matches_projection() {
    let f = fixture();
    let g = &f.g;
    let rj = assemble_operator_matrix(OperatorTag::RJ, &f.data, g).unwrap();
    for &(i, j) in &[(1, 0), (4, 3), (7, 5)] {
        let p = g.build_pulse(i, j).unwrap();
        let want = g.project(&rj_by_hand(&p)).unwrap();
        let got = rj.column(g.index(i, j));
        assert!((got - &want).amax() < 1e-8 * want.amax(), "({i}, {j})");
    }
}

#[test]
fn zero_data_gives_zero_matrix() {
    let f = fixture();
    let k = assemble_k(&f.data.zeroed(), &f.g, AssembleOptions::default()).unwrap();
    assert!(k.k.iter().all(|&v| v == 0.0));
}

#[test]
fn connecting_matrix_is_linear_in_data() {
    let f = fixture();
    let mut d = f.data.clone();
    for per in &mut d.traces {
        for t in per {
            t.mapv_inplace(|v| 2.5 * v);
        }
    }
    let opts = AssembleOptions {
        symmetrize: false,
        skip_eigen: true,
    };
    let k1 = assemble_k(&f.data, &f.g, opts).unwrap();
    let k2 = assemble_k(&d, &f.g, opts).unwrap();
    // the data enter both terms linearly, [R J] does not depend on them
    assert!((&k2.k - &k1.k * 2.5).amax() < 1e-10 * k1.k.amax());
}

#[test]
fn structure_on_small_strip() {
    let d = &fixture().k.diagnostics;
    assert!(d.symmetry_defect < 0.05, "{}", d.symmetry_defect);
    assert!(d.negativity() < 0.01, "{}", d.negativity());
    assert!(d.warnings.is_empty());
}

#[test]
fn positive_part_is_symmetric_semidefinite() {
    let k = fixture().k.psd_part();
    let a = k.form();
    assert!((&a - a.transpose()).amax() < 1e-10 * a.amax());
    let d = k.diagnose(true);
    assert!(d.min_eigenvalue > -1e-10 * d.max_eigenvalue);
}

#[test]
fn agrees_with_interior_inner_products() {
    let f = fixture();
    let s = &f.s;
    let tau = f.g.tau;
    let solver = WaveSolver::new(&s.c, s.spec.gamma_half_width, stable_step(&s.c, s.rec.dt)).unwrap();
    let full = RegionMask::full(s.c.grid);
    let req = OutputRequest {
        snapshot_times: vec![tau],
        ..Default::default()
    };
    let snap = |c: &DVector<f64>| {
        solver
            .solve_neumann(&f.g.forcing(c), tau, &req)
            .unwrap()
            .snapshots
            .remove(0)
            .values
    };
    for seed in 0..3 {
        let (a, b) = (random(f.g.dim(), 2 * seed), random(f.g.dim(), 2 * seed + 1));
        let (ua, ub) = (snap(&a), snap(&b));
        let ip = |x, y| inner_product_interior(x, y, &s.c, &full);
        let bound = 0.03 * (ip(&ua, &ua) * ip(&ub, &ub)).sqrt();
        let gap = (f.k.pairing(&a, &b) - ip(&ua, &ub)).abs();
        assert!(gap <= bound, "seed {seed}: {gap} > {bound}");
    }
}

#[test]
fn dataset_and_matrix_round_trip() {
    let f = fixture();
    let dir = std::env::temp_dir().join(format!("redatum-connecting-{}", std::process::id()));
    f.data.save(&dir).unwrap();
    let back = NtdDataset::load(&dir).unwrap();
    assert_eq!(back.id(), f.data.id());
    assert_eq!(back.traces, f.data.traces);
    let path = dir.join("k.kmat");
    f.k.save(&path).unwrap();
    let k = ConnectingMatrix::load(&path).unwrap();
    assert_eq!(k.k, f.k.k);
    assert_eq!(k.dataset_id, f.data.id());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn longer_horizon_needs_longer_data() {
    let f = fixture();
    let g = GramMatrix::new(&f.s.basis, &f.s.rec, 1.5);
    if let Ok(g) = g {
        assert!(f.data.trace_of(0, 0, &g).is_err());
    }
}
