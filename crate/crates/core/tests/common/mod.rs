#![allow(dead_code)]

use redatum_core::basis::{GramMatrix, PulseGrid, Receivers};
use redatum_core::domain::{build_wavespeed, DomainSpec, WavespeedField};
use redatum_core::wave_sim::{stable_step, GaussianPulse, NoForcing, OutputRequest, WaveSolver};

/// A 6 x 1 strip at desk spacing with a short accessible segment.
pub fn small_spec() -> DomainSpec {
    DomainSpec {
        x_min: -3.0,
        x_max: 3.0,
        depth: 1.0,
        nx: 241,
        ny: 41,
        gamma_half_width: 0.6,
        known_radius: 0.3,
        final_time: 1.0,
    }
}

pub struct Small {
    pub spec: DomainSpec,
    pub c: WavespeedField,
    pub basis: PulseGrid,
    pub rec: Receivers,
}

pub fn small() -> Small {
    let spec = small_spec();
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let basis = PulseGrid::scaled(&spec, 0.1, 350.0);
    let rec = Receivers::desk(&spec, &c).unwrap();
    Small { spec, c, basis, rec }
}

impl Small {
    pub fn gram(&self, tau: f64) -> GramMatrix {
        GramMatrix::new(&self.basis, &self.rec, tau).unwrap()
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Surface pulse centred at `x_c`, switched on over `[0, t_hi]`.
pub fn surface_pulse(t_c: f64, x_c: f64, a: f64, t_hi: f64) -> GaussianPulse {
    GaussianPulse {
        t_c,
        x_c,
        a_t: a,
        a_x: a,
        amp: 1.0,
        t_lo: 0.0,
        t_hi,
        radius: 6.0,
    }
}

/// Largest relative change of the discrete energy after the surface source has
/// switched off, up to the final time of `spec`.
pub fn energy_drift(spec: &DomainSpec, model: &str) -> f64 {
    let c = build_wavespeed(spec, model).unwrap();
    let solver = WaveSolver::new(&c, spec.gamma_half_width, stable_step(&c, 0.01)).unwrap();
    let t_off = 0.4;
    let pulse = surface_pulse(0.2, 0.0, 350.0, t_off);
    let quiet_from = solver.step_of(t_off).unwrap() + 1;
    let n_end = solver.step_of(spec.final_time).unwrap();
    let mut prev: Vec<f64> = Vec::new();
    let mut e0 = None;
    let mut drift: f64 = 0.0;
    let mut obs = |n: usize, u: &[f64]| {
        if n > quiet_from {
            let e = solver.energy(&prev, u);
            let e0 = *e0.get_or_insert(e);
            drift = drift.max((e - e0).abs() / e0);
        }
        prev.clear();
        prev.extend_from_slice(u);
    };
    solver.run(&pulse, &NoForcing, n_end, &mut obs);
    drift
}

/// Trace at `x = 0.5` of a smooth surface pulse on the small strip with
/// `nx x ny` nodes, sampled every 0.01 up to `t = 1`.
pub fn convergence_trace(nx: usize, ny: usize) -> Vec<f64> {
    let spec = DomainSpec { nx, ny, ..small_spec() };
    let c = build_wavespeed(&spec, "linear-depth").unwrap();
    let solver = WaveSolver::new(&c, spec.gamma_half_width, stable_step(&c, 0.01)).unwrap();
    let req = OutputRequest {
        trace_x: vec![0.5],
        trace_dt: 0.01,
        snapshot_times: vec![],
    };
    let pulse = surface_pulse(0.45, 0.0, 100.0, 1.0);
    let rec = solver.solve_neumann(&pulse, 1.0, &req).unwrap();
    rec.trace.unwrap().data.column(0).to_vec()
}

/// Differences between successive refinements of [`convergence_trace`] and their ratio.
pub fn convergence_ratio() -> (f64, f64, f64) {
    let t: Vec<Vec<f64>> = [(121, 21), (241, 41), (481, 81)]
        .iter()
        .map(|&(nx, ny)| convergence_trace(nx, ny))
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let (e1, e2) = (diff(&t[0], &t[1]), diff(&t[1], &t[2]));
    (e1, e2, e1 / e2)
}

/// Largest `|u(T)|` farther than `T + margin` from the accessible segment, relative
/// to `max |u(T)|`, in a constant medium.
pub fn leak_beyond_reach(spec: &DomainSpec, margin: f64) -> f64 {
    let c = build_wavespeed(spec, "constant").unwrap();
    let solver = WaveSolver::new(&c, spec.gamma_half_width, stable_step(&c, 0.01)).unwrap();
    let t = spec.final_time;
    let pulse = surface_pulse(0.15, 0.0, 350.0, t);
    let req = OutputRequest {
        snapshot_times: vec![t],
        ..Default::default()
    };
    let snap = solver.solve_neumann(&pulse, t, &req).unwrap().snapshots.remove(0);
    let g = c.grid;
    let peak = snap.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut outside: f64 = 0.0;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let d = (g.x(ix).abs() - spec.gamma_half_width).max(0.0).hypot(iy as f64 * g.hy);
            if d > t + margin {
                outside = outside.max(snap.values[[iy, ix]].abs());
            }
        }
    }
    outside / peak
}
