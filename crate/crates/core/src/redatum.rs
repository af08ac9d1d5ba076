//! Redatuming pipelines.
//!
//! Moving receivers turns a boundary source `f` into interior snapshots
//! `u^f(t)` on the known region: a windowed control `h` with
//! `u^h(T) ≈ u^f(t)` is found from `[K^T]` alone and then simulated in the known
//! medium. Moving sources does the same for interior sources `F`, with the
//! right-hand side obtained by transposition through a sampled version of `L`.

use std::borrow::Cow;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{GramMatrix, PulseGrid, Receivers};
use crate::connecting::ConnectingMatrix;
use crate::control::{ControlSolution, ControlSystem, Formulation, SolverKind, SolverOptions};
use crate::domain::{extend_known, known_region_mask, DomainSpec, Grid, RegionMask, WavespeedField};
use crate::error::{Error, Result};
use crate::io;
use crate::signal::{whole_steps, BoundarySignal};
use crate::time_ops;
use crate::wave_sim::{stable_step, BoundaryForcing, Delayed, InteriorForcing, OutputRequest, Snapshot, WaveSolver};

/// Medium inside the known region, extended outside it, on a box of columns
/// wide enough that nothing launched during a control window reaches the side walls.
#[derive(Clone, Debug)]
pub struct KnownMedium {
    pub spec: DomainSpec,
    pub mask: RegionMask,
    pub c: WavespeedField,
    pub ix0: usize,
    pub nx: usize,
    solver: WaveSolver,
}

impl KnownMedium {
    /// `active` is the longest time a control acts before the snapshot.
    pub fn new(spec: &DomainSpec, c: &WavespeedField, active: f64, sample_dt: f64) -> Result<Self> {
        let mask = known_region_mask(spec, c)?;
        let known = extend_known(c, &mask);
        let g = c.grid;
        let cols: Vec<usize> = (0..g.nx).filter(|&ix| mask.bottom_row[ix].is_some()).collect();
        let (first, last) = match (cols.first(), cols.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InvalidDomain("known region is empty".into())),
        };
        let extra = (known.max() * active / g.hx).ceil() as usize;
        let ix0 = first.saturating_sub(extra);
        let ix1 = (last + extra).min(g.nx - 1);
        let nx = ix1 - ix0 + 1;
        let boxed = known.columns(ix0, nx);
        let solver = WaveSolver::new(&boxed, spec.gamma_half_width, stable_step(&boxed, sample_dt))?;
        Ok(KnownMedium {
            spec: spec.clone(),
            mask,
            c: known,
            ix0,
            nx,
            solver,
        })
    }

    /// Known medium for controls from the pulse family of `g`, acting over the
    /// last `r` of `[0, tau]` plus the pulse reach.
    pub fn for_gram(spec: &DomainSpec, c: &WavespeedField, g: &GramMatrix) -> Result<Self> {
        Self::new(spec, c, spec.known_radius + g.basis.reach_t(), g.receivers.dt)
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid
    }

    fn run(&self, f: &dyn BoundaryForcing, t_end: f64) -> Result<Snapshot> {
        let req = OutputRequest {
            snapshot_times: vec![t_end],
            ..Default::default()
        };
        Ok(self.solver.solve_neumann(f, t_end, &req)?.snapshots.remove(0))
    }

    /// Snapshot at `t_end` on the full grid, zero outside the known region.
    pub fn snapshot(&self, f: &dyn BoundaryForcing, t_end: f64) -> Result<Snapshot> {
        let s = self.run(f, t_end)?;
        let mut out = Snapshot::zeros(self.grid(), t_end);
        out.values
            .slice_mut(ndarray::s![.., self.ix0..self.ix0 + self.nx])
            .assign(&s.values);
        Ok(out.masked(&self.mask))
    }

    /// Values at the lattice points at `t_end`.
    pub fn sample(&self, f: &dyn BoundaryForcing, t_end: f64, lattice: &SampleLattice) -> Result<Vec<f64>> {
        let s = self.run(f, t_end)?;
        Ok(lattice
            .nodes
            .iter()
            .map(|&[iy, ix]| s.values[[iy, ix - self.ix0]])
            .collect())
    }
}

/// Uniform lattice of interior points under the accessible segment, inside the
/// known region, with trapezoid weights times `c^{-2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLattice {
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    /// `(x, y)` with `y <= 0`, row by row from the surface.
    pub points: Vec<[f64; 2]>,
    /// `[iy, ix]` on the full grid.
    pub nodes: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
}

impl SampleLattice {
    pub fn new(known: &KnownMedium, spacing: f64) -> Result<Self> {
        let g = known.grid();
        let l = known.spec.gamma_half_width;
        let nx = whole_steps(2.0 * l, spacing)? + 1;
        let sx = whole_steps(spacing, g.hx)?;
        let sy = whole_steps(spacing, g.hy)?;
        let ix_first = g
            .column_of(-l)
            .ok_or_else(|| Error::InvalidParameter("the segment end is not a grid node".into()))?;
        let row_inside = |iy: usize| (0..nx).all(|k| iy < g.ny && known.mask.contains(iy, ix_first + k * sx));
        let mut ny = 0;
        while row_inside(ny * sy) {
            ny += 1;
        }
        if ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing {spacing} leaves fewer than two rows in the known region"
            )));
        }
        let wx = crate::signal::trapezoid_weights(nx, spacing);
        let wy = crate::signal::trapezoid_weights(ny, spacing);
        let mut points = Vec::with_capacity(nx * ny);
        let mut nodes = Vec::with_capacity(nx * ny);
        let mut weights = Vec::with_capacity(nx * ny);
        for r in 0..ny {
            for k in 0..nx {
                let (iy, ix) = (r * sy, ix_first + k * sx);
                let c = known.c.at(iy, ix);
                points.push([g.x(ix), g.y(iy)]);
                nodes.push([iy, ix]);
                weights.push(wx[k] * wy[r] / (c * c));
            }
        }
        Ok(SampleLattice {
            spacing,
            nx,
            ny,
            points,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn depth(&self) -> f64 {
        (self.ny - 1) as f64 * self.spacing
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub alpha: f64,
    pub formulation: Formulation,
    pub symmetrize: bool,
    /// Drop the negative spectrum of `[K]` relative to the Gram matrix before solving.
    pub positive_part: bool,
    pub solver: SolverOptions,
}

impl ControlSettings {
    pub fn receivers() -> Self {
        ControlSettings {
            alpha: 5e-5,
            formulation: Formulation::Galerkin,
            symmetrize: true,
            positive_part: true,
            solver: SolverOptions::default(),
        }
    }

    pub fn sources() -> Self {
        ControlSettings {
            alpha: 1e-4,
            ..Self::receivers()
        }
    }
}

/// Pulses of `g` centred in `[tau - r, tau)`. The pulse centred at `tau - r` is
/// kept: without it the front at travel-time depth `r` cannot be matched.
pub fn control_window(g: &GramMatrix, r: f64) -> std::ops::Range<usize> {
    g.window(g.tau - r - 1e-6, g.tau)
}

/// Control system on the window `[tau - r, tau)` of one connecting matrix.
#[derive(Clone, Debug)]
pub struct WindowControl<'a> {
    /// The connecting matrix actually used (its positive part if requested).
    pub k: Cow<'a, ConnectingMatrix>,
    pub known: &'a KnownMedium,
    pub settings: ControlSettings,
    pub system: ControlSystem,
}

impl<'a> WindowControl<'a> {
    pub fn new(k: &'a ConnectingMatrix, known: &'a KnownMedium, settings: ControlSettings) -> Result<Self> {
        let k = if settings.positive_part {
            Cow::Owned(k.psd_part())
        } else {
            Cow::Borrowed(k)
        };
        let window = control_window(&k.gram, known.spec.known_radius);
        let system = ControlSystem::new(&k, window, settings.formulation, settings.symmetrize)?;
        Ok(WindowControl {
            k,
            known,
            settings,
            system,
        })
    }

    /// Solves with coefficients `[b]` as right-hand side.
    pub fn solve(&self, b: &DVector<f64>) -> Result<ControlSolution> {
        self.system.solve(b, self.settings.alpha, &self.settings.solver)
    }

    /// `u^h(tau)` on the known region.
    pub fn snapshot(&self, h: &DVector<f64>) -> Result<Snapshot> {
        self.known.snapshot(&self.k.gram.forcing(h), self.k.tau)
    }
}

/// Moving receivers with `[K^T]`.
#[derive(Clone, Debug)]
pub struct ReceiverMover<'a> {
    pub control: WindowControl<'a>,
}

impl<'a> ReceiverMover<'a> {
    pub fn new(k: &'a ConnectingMatrix, known: &'a KnownMedium, settings: ControlSettings) -> Result<Self> {
        Ok(ReceiverMover {
            control: WindowControl::new(k, known, settings)?,
        })
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.control.k.gram
    }

    /// `[K][Z_{T-t} f]` for `f` sampled on the receivers over `[0, T]`.
    pub fn rhs(&self, f: &BoundarySignal, t: f64) -> Result<DVector<f64>> {
        let g = self.gram();
        let tau = g.tau;
        if !(-1e-12..=tau + 1e-12).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_end: tau });
        }
        let z = g.project(&time_ops::delay(f, (tau - t).max(0.0))?)?;
        Ok(&self.control.k.k * z)
    }

    pub fn solve(&self, f: &BoundarySignal, t: f64) -> Result<ControlSolution> {
        self.control.solve(&self.rhs(f, t)?)
    }

    /// Approximation of `u^f(t)` on the known region.
    pub fn move_receivers(&self, f: &BoundarySignal, t: f64) -> Result<Snapshot> {
        let h = self.solve(f, t)?;
        let mut s = self.control.snapshot(&h.coeffs)?;
        s.time = t;
        Ok(s)
    }
}

pub fn move_receivers(
    f: &BoundarySignal,
    t: f64,
    k: &ConnectingMatrix,
    known: &KnownMedium,
    settings: ControlSettings,
) -> Result<Snapshot> {
    ReceiverMover::new(k, known, settings)?.move_receivers(f, t)
}

/// Samples a boundary source on the receivers over `[0, tau]`.
pub fn sample_boundary(receivers: &Receivers, tau: f64, f: impl Fn(f64, f64) -> f64) -> Result<BoundarySignal> {
    let n = receivers.samples(tau)?;
    Ok(BoundarySignal::from_fn(
        receivers.dt,
        receivers.x_first,
        receivers.dx,
        n,
        receivers.nx,
        f,
    ))
}

/// `L phi_{i,j}(t_l, p_k)` for the pulses of `S^T`, stored for the pulses that are
/// not time shifts of one another: the earliest pulse not cut at `t = 0` and every
/// pulse before it. Values are for unit-amplitude pulses.
#[derive(Clone, Debug)]
pub struct DiscreteL {
    pub basis: PulseGrid,
    pub receivers: Receivers,
    pub final_time: f64,
    pub settings: ControlSettings,
    pub time_step: f64,
    pub n_times: usize,
    pub lattice: SampleLattice,
    /// Temporal indices with stored values; the first one is shifted for every later pulse.
    pub stored: Vec<usize>,
    /// `[stored][j][l][k]`.
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteLHeader {
    kind: String,
    basis: PulseGrid,
    receivers: Receivers,
    final_time: f64,
    settings: ControlSettings,
    time_step: f64,
    n_times: usize,
    lattice: SampleLattice,
    stored: Vec<usize>,
}

impl DiscreteL {
    pub fn n_points(&self) -> usize {
        self.lattice.len()
    }

    /// Number of stored values.
    pub fn records(&self) -> usize {
        self.stored.len() * self.basis.nx * self.n_times * self.n_points()
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.time_step
    }

    fn slot(&self, v: usize, j: usize, l: usize) -> &[f64] {
        let np = self.n_points();
        let o = ((v * self.basis.nx + j) * self.n_times + l) * np;
        &self.values[o..o + np]
    }

    /// `L phi_{i,j}(t_l)` at the lattice for the normalized pulse of `g`, if nonzero.
    pub fn value(&self, g: &GramMatrix, i: usize, j: usize, l: usize) -> Option<(f64, &[f64])> {
        let scale = g.norm_const(i);
        if let Some(v) = self.stored.iter().skip(1).position(|&s| s == i) {
            return Some((scale, self.slot(v + 1, j, l)));
        }
        let first = self.stored[0];
        let steps = ((self.basis.t_center(i) - self.basis.t_center(first)) / self.time_step).round() as usize;
        (l >= steps).then(|| (scale, self.slot(0, j, l - steps)))
    }

    /// `sum_l w_l sum_k w_k L phi_{i,j}(t_l, p_k) x[l][k]` for every pulse of `g`,
    /// over `t_l` in `[0, g.tau]`.
    pub fn pair(&self, g: &GramMatrix, x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let nl = whole_steps(g.tau, self.time_step)? + 1;
        if x.len() != nl || nl > self.n_times || x.iter().any(|r| r.len() != self.n_points()) {
            return Err(Error::ShapeMismatch(format!(
                "pairing needs {nl} rows of {} lattice values",
                self.n_points()
            )));
        }
        let wt = crate::signal::trapezoid_weights(nl, self.time_step);
        let wk = &self.lattice.weights;
        let xw: Vec<Vec<f64>> = x
            .iter()
            .zip(&wt)
            .map(|(row, w)| row.iter().zip(wk).map(|(v, q)| v * q * w).collect())
            .collect();
        let cols: Vec<Vec<f64>> = (0..g.nx)
            .into_par_iter()
            .map(|j| {
                (0..g.nt)
                    .map(|i| {
                        (0..nl)
                            .filter_map(|l| {
                                self.value(g, i, j, l)
                                    .map(|(s, vals)| s * vals.iter().zip(&xw[l]).map(|(a, b)| a * b).sum::<f64>())
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(DMatrix::from_fn(g.nt, g.nx, |i, j| cols[j][i]))
    }

    pub fn id(&self) -> String {
        let h = crate::basis::fnv1a(
            self.values
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<u8>>()
                .as_slice(),
        );
        format!("{h:016x}")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = DiscreteLHeader {
            kind: "discrete-l".into(),
            basis: self.basis.clone(),
            receivers: self.receivers.clone(),
            final_time: self.final_time,
            settings: self.settings,
            time_step: self.time_step,
            n_times: self.n_times,
            lattice: self.lattice.clone(),
            stored: self.stored.clone(),
        };
        io::write_container(path, &header, &self.values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, values): (DiscreteLHeader, Vec<f64>) = io::read_container(path)?;
        if h.kind != "discrete-l" {
            return Err(Error::Format(format!("expected discrete-l, found {}", h.kind)));
        }
        let d = DiscreteL {
            basis: h.basis,
            receivers: h.receivers,
            final_time: h.final_time,
            settings: h.settings,
            time_step: h.time_step,
            n_times: h.n_times,
            lattice: h.lattice,
            stored: h.stored,
            values,
        };
        if d.values.len() != d.records() {
            return Err(Error::Format("discrete-l payload has the wrong length".into()));
        }
        Ok(d)
    }
}

/// Options for [`build_discrete_l`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLOptions {
    /// Lattice spacing and output time step are the pulse spacings divided by
    /// this factor; [`matched_refinement`] when `None`.
    pub refinement: Option<usize>,
}

/// Smallest factor `m` with `(spacing / m) sqrt(2 a) <= 1.35`, so that lattice
/// and time samples resolve a pulse-shaped interior source as well as the
/// sharp family with `a = 1382` does at spacing 0.025.
pub fn matched_refinement(basis: &PulseGrid) -> usize {
    let a = basis.a_t.max(basis.a_x);
    let h = basis.dt.max(basis.dx);
    ((h * (2.0 * a).sqrt() / 1.35).ceil() as usize).max(1)
}

/// Runs moving receivers for every stored pulse, position and output time.
///
/// The control matrix is factored once; `u^h(T)` at the lattice is linear in
/// `h`, so it is assembled from one simulation per window pulse.
pub fn build_discrete_l(
    k: &ConnectingMatrix,
    known: &KnownMedium,
    settings: ControlSettings,
    opts: DiscreteLOptions,
) -> Result<DiscreteL> {
    let mover = ReceiverMover::new(k, known, settings)?;
    let g = &k.gram;
    let basis = &g.basis;
    let tau = g.tau;
    let m = opts.refinement.unwrap_or_else(|| matched_refinement(basis));
    if m == 0 {
        return Err(Error::InvalidParameter("refinement must be positive".into()));
    }
    let time_step = basis.dt / m as f64;
    whole_steps(time_step, g.receivers.dt)?;
    let n_times = whole_steps(tau, time_step)? + 1;
    let lattice = SampleLattice::new(known, basis.dx / m as f64)?;

    let first = (0..g.nt)
        .find(|&i| !basis.cut_at_zero(i))
        .ok_or_else(|| Error::InvalidParameter("every pulse is cut at t = 0".into()))?;
    let mut stored = vec![first];
    stored.extend(0..first);

    let ns = g.receivers.samples(tau)?;
    let spatial: Vec<Vec<f64>> = (0..g.nx)
        .map(|j| {
            (0..g.receivers.nx)
                .map(|r| basis.spatial(j, g.receivers.x(r)))
                .collect()
        })
        .collect();
    let mut jobs = Vec::new();
    for &i in &stored {
        let profile: Vec<f64> = (0..ns)
            .map(|l| basis.temporal(i, l as f64 * g.receivers.dt, tau))
            .collect();
        for j in 0..g.nx {
            for l in 0..n_times {
                jobs.push((i, j, l, profile.clone()));
            }
        }
    }
    let sys = &mover.control.system;
    let rhs_cols: Vec<DVector<f64>> = jobs
        .par_iter()
        .map(|(_, j, l, profile)| -> Result<DVector<f64>> {
            let shift = whole_steps(tau - *l as f64 * time_step, g.receivers.dt)?;
            let a: Vec<f64> = (0..ns)
                .map(|q| if q >= shift { profile[q - shift] } else { 0.0 })
                .collect();
            let z = g.project_separable(&a, &spatial[*j])?;
            Ok(sys.rhs(&(&mover.control.k.k * z)))
        })
        .collect::<Result<_>>()?;
    let rhs = DMatrix::from_columns(&rhs_cols);
    let q = sys.solve_many(&rhs, settings.alpha)?;

    let window: Vec<usize> = sys.window.clone().collect();
    let snaps: Vec<Vec<f64>> = window
        .par_iter()
        .map(|&m| {
            let p = g.pulse_forcing(m / g.nx, m % g.nx, 1.0);
            known.sample(&p, tau, &lattice)
        })
        .collect::<Result<_>>()?;
    let np = lattice.len();
    let s = DMatrix::from_fn(np, window.len(), |kk, w| snaps[w][kk]);
    let out = s * q;
    let mut values = Vec::with_capacity(np * jobs.len());
    for c in 0..jobs.len() {
        values.extend(out.column(c).iter());
    }
    Ok(DiscreteL {
        basis: basis.clone(),
        receivers: g.receivers.clone(),
        final_time: tau,
        settings,
        time_step,
        n_times,
        lattice,
        stored,
        values,
    })
}

/// Checks that `F` vanishes, to relative `1e-3`, outside the lattice and after `t_max`.
fn check_interior_support(f: &dyn InteriorForcing, d: &DiscreteL, t_max: f64) -> Result<()> {
    let l = d.lattice.points[0][0].abs();
    let depth = d.lattice.depth();
    let h = 0.5 * d.lattice.spacing;
    let nt = (d.final_time / d.receivers.dt).round() as usize;
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    let nxs = (2.0 * (l + 1.0) / h).round() as usize;
    let nys = (2.0 * (depth + 1.0) / h).round() as usize;
    for q in 0..=nt {
        let t = q as f64 * d.receivers.dt;
        for a in 0..=nxs {
            let x = -l - 1.0 + a as f64 * h;
            for b in 0..=nys {
                let y = -(b as f64) * h;
                let v = f.value(t, x, y).abs();
                if t <= t_max + 1e-9 && x.abs() <= l + 1e-9 && -y <= depth + 1e-9 {
                    inside = inside.max(v);
                } else {
                    outside = outside.max(v);
                }
            }
        }
    }
    if outside > 1e-3 * inside {
        return Err(Error::Support(format!(
            "interior source reaches {outside:.3e} outside the sampled region (max inside {inside:.3e})"
        )));
    }
    Ok(())
}

/// `F` at lattice points at time `t`: the average of the one-sided limits, or the
/// limit from inside the interval at its ends.
fn lattice_values(f: &dyn InteriorForcing, lattice: &SampleLattice, t: f64, endpoint: bool) -> Vec<f64> {
    let w = if endpoint { 1.0 } else { f.weight(t) };
    lattice.points.iter().map(|&[x, y]| w * f.value(t, x, y)).collect()
}

/// Projection of `w^F` on `[0, T] x Gamma` onto `S^T`, sampled on the receivers.
pub fn wf_trace(f: &dyn InteriorForcing, d: &DiscreteL, g: &GramMatrix) -> Result<BoundarySignal> {
    let tau = d.final_time;
    if (g.tau - tau).abs() > 1e-9 {
        return Err(Error::InvalidParameter("wf_trace needs the Gram matrix of S^T".into()));
    }
    check_interior_support(f, d, 0.5 * tau)?;
    let n = whole_steps(tau, d.time_step)?;
    let x: Vec<Vec<f64>> = (0..=n)
        .map(|l| lattice_values(f, &d.lattice, tau - d.time(l), l == 0 || l == n))
        .collect();
    let b = d.pair(g, &x)?;
    let coeffs = g.flatten(&g.solve_grid(&b));
    time_ops::time_reverse(&g.reconstruct(&coeffs), tau)
}

/// `(J^{T/2} F)(t_l) = 1/2 ∫_{t_l}^{T - t_l} F` at the lattice for `t_l` in `[0, T/2]`.
fn filtered_source(f: &dyn InteriorForcing, d: &DiscreteL) -> Result<Vec<Vec<f64>>> {
    let tau = d.final_time;
    let dt = d.receivers.dt;
    let nf = whole_steps(tau, dt)?;
    let per = whole_steps(d.time_step, dt)?;
    let np = d.n_points();
    let raw: Vec<Vec<f64>> = (0..=nf)
        .map(|q| lattice_values(f, &d.lattice, q as f64 * dt, true))
        .collect();
    let avg: Vec<Vec<f64>> = (0..=nf)
        .map(|q| lattice_values(f, &d.lattice, q as f64 * dt, false))
        .collect();
    // prefix[q] = sum of avg[0..q]
    let mut prefix = vec![vec![0.0; np]; nf + 2];
    for q in 0..=nf {
        for k in 0..np {
            prefix[q + 1][k] = prefix[q][k] + avg[q][k];
        }
    }
    let nh = whole_steps(0.5 * tau, d.time_step)?;
    Ok((0..=nh)
        .map(|l| {
            let a = l * per;
            let b = nf - a;
            (0..np)
                .map(|k| {
                    if b <= a {
                        0.0
                    } else {
                        let inner = prefix[b][k] - prefix[a + 1][k];
                        0.5 * dt * (inner + 0.5 * (raw[a][k] + raw[b][k]))
                    }
                })
                .collect()
        })
        .collect())
}

/// Coefficients in `S^{T/2}` of `(W^{T/2})^* w^F(T/2)`.
pub fn kstar_apply(
    f: &dyn InteriorForcing,
    d: &DiscreteL,
    g_half: &GramMatrix,
    g_full: &GramMatrix,
) -> Result<DVector<f64>> {
    Ok(g_half.solve(&kstar_products(f, d, g_half, g_full)?))
}

/// `<phi_i, (W^{T/2})^* w^F(T/2)>` for the pulses of `S^{T/2}`.
pub fn kstar_products(
    f: &dyn InteriorForcing,
    d: &DiscreteL,
    g_half: &GramMatrix,
    g_full: &GramMatrix,
) -> Result<DVector<f64>> {
    let tau = d.final_time;
    if (g_half.tau - 0.5 * tau).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "kstar_apply needs the Gram matrix of S^{T/2}".into(),
        ));
    }
    let w = wf_trace(f, d, g_full)?;
    let jw = time_ops::time_filter(&w, 0.5 * tau)?;
    let first = g_half.inner_products(&jw)?;
    let second = d.pair(g_half, &filtered_source(f, d)?)?;
    Ok(g_half.flatten(&(first - second)))
}

/// Moving sources with `[K^{T/2}]` and the sampled `L`.
pub struct SourceMover<'a> {
    pub control: WindowControl<'a>,
    pub discrete_l: &'a DiscreteL,
    pub g_full: GramMatrix,
}

impl<'a> SourceMover<'a> {
    pub fn new(
        k_half: &'a ConnectingMatrix,
        discrete_l: &'a DiscreteL,
        known: &'a KnownMedium,
        settings: ControlSettings,
    ) -> Result<Self> {
        if (2.0 * k_half.tau - discrete_l.final_time).abs() > 1e-9 {
            return Err(Error::InvalidParameter("moving sources needs [K] at T/2".into()));
        }
        let g_full = GramMatrix::new(&discrete_l.basis, &discrete_l.receivers, discrete_l.final_time)?;
        Ok(SourceMover {
            control: WindowControl::new(k_half, known, settings)?,
            discrete_l,
            g_full,
        })
    }

    /// Control for the snapshot at `t` in `[0, T/2]`.
    pub fn solve(&self, f: &dyn InteriorForcing, t: f64) -> Result<ControlSolution> {
        let half = self.control.k.tau;
        if !(-1e-12..=half + 1e-12).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_end: half });
        }
        let delay = (half - t).max(0.0);
        whole_steps(delay, self.discrete_l.receivers.dt)?;
        let shifted = Delayed {
            inner: f,
            delay,
            cut: half,
        };
        let b = kstar_apply(&shifted, self.discrete_l, &self.control.k.gram, &self.g_full)?;
        self.control.solve(&b)
    }

    /// Approximation of `w^F(t)` on the known region.
    pub fn move_sources(&self, f: &dyn InteriorForcing, t: f64) -> Result<Snapshot> {
        let h = self.solve(f, t)?;
        let mut s = self.control.snapshot(&h.coeffs)?;
        s.time = t;
        Ok(s)
    }
}

pub fn move_sources(
    f: &dyn InteriorForcing,
    t: f64,
    k_half: &ConnectingMatrix,
    discrete_l: &DiscreteL,
    known: &KnownMedium,
    settings: ControlSettings,
) -> Result<Snapshot> {
    SourceMover::new(k_half, discrete_l, known, settings)?.move_sources(f, t)
}

/// `||a - b|| / ||b||` in the weighted interior norm over the mask.
pub fn relative_error(a: &Snapshot, b: &Snapshot, c: &WavespeedField, mask: &RegionMask) -> f64 {
    let d = &a.values - &b.values;
    let num = crate::domain::inner_product_interior(&d, &d, c, mask);
    let den = crate::domain::inner_product_interior(&b.values, &b.values, c, mask);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Normalized cross-correlation of the depth profiles of `a` and `b` along the
/// grid column nearest `x`, restricted to the mask: `sum_d a(d) b(d + lag)`
/// over `||a|| ||b||`, for `lag` (in rows) in `-max_lag..=max_lag`.
pub fn depth_profile_correlation(
    a: &Snapshot,
    b: &Snapshot,
    mask: &RegionMask,
    x: f64,
    max_lag: usize,
) -> Vec<(isize, f64)> {
    let g = mask.grid;
    let ix = g.nearest_column(x);
    let profile = |s: &Snapshot| -> Vec<f64> {
        (0..g.ny)
            .map(|iy| if mask.contains(iy, ix) { s.values[[iy, ix]] } else { 0.0 })
            .collect()
    };
    let (pa, pb) = (profile(a), profile(b));
    let na = pa.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = pb.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m = max_lag as isize;
    (-m..=m)
        .map(|lag| {
            let s: f64 = (0..g.ny as isize)
                .filter(|&d| (0..g.ny as isize).contains(&(d + lag)))
                .map(|d| pa[d as usize] * pb[(d + lag) as usize])
                .sum();
            let c = if na > 0.0 && nb > 0.0 { s / (na * nb) } else { 0.0 };
            (lag, c)
        })
        .collect()
}

/// Lag with the largest correlation.
pub fn peak_lag(corr: &[(isize, f64)]) -> Option<(isize, f64)> {
    corr.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Full-domain solver for reference solutions.
pub fn reference_solver(spec: &DomainSpec, c: &WavespeedField, sample_dt: f64) -> Result<WaveSolver> {
    WaveSolver::new(c, spec.gamma_half_width, stable_step(c, sample_dt))
}

/// Solver kind by name: `cg`, `gmres`, `direct`.
pub fn parse_solver(name: &str, restart: usize) -> Result<SolverKind> {
    match name {
        "cg" => Ok(SolverKind::Cg),
        "gmres" => Ok(SolverKind::Gmres { restart }),
        "direct" => Ok(SolverKind::Direct),
        other => Err(Error::InvalidParameter(format!("unknown solver {other:?}"))),
    }
}
