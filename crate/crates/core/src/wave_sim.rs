//! Explicit leapfrog solver for `u_tt = c^2 Δu + F` on the strip with Neumann walls.
//!
//! The surface row carries the boundary data through a mirrored ghost node,
//! `u_ghost = u_1 + 2 hy f / c`, so `f` is the derivative along the metric normal.
//! Fields are at rest before the first forcing step; time step `n` is `t = n dt`.
//! A source switched on or off abruptly gets half weight at the switching sample,
//! which makes the discrete response the trapezoid rule of the Duhamel integral.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{Grid, RegionMask, WavespeedField};
use crate::error::{Error, Result};
use crate::io;
use crate::signal::{whole_steps, BoundarySignal};

pub const CFL_LIMIT: f64 = 0.5;

/// Neumann data on the surface row.
pub trait BoundaryForcing: Sync {
    /// Adds the injected data at `t` for every surface node into `out`.
    fn eval(&self, t: f64, grid: &Grid, out: &mut [f64]);
    /// Interval outside which the data vanish.
    fn time_support(&self) -> (f64, f64);
}

/// Interior forcing `F(t, x, y)` with `y <= 0`.
pub trait InteriorForcing: Sync {
    fn value(&self, t: f64, x: f64, y: f64) -> f64;
    fn time_support(&self) -> (f64, f64);
    /// `[x_lo, x_hi, y_lo, y_hi]` containing the spatial support.
    fn spatial_support(&self) -> [f64; 4];
    /// Quadrature weight of the sample at `t`: one half where the source jumps.
    fn weight(&self, _t: f64) -> f64 {
        1.0
    }

    fn add_scaled(&self, t: f64, grid: &Grid, scale: f64, out: &mut [f64]) {
        let (t0, t1) = self.time_support();
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return;
        }
        let scale = scale * self.weight(t);
        let [x0, x1, y0, y1] = self.spatial_support();
        let ix0 = ((x0 - grid.x_min) / grid.hx).floor().max(0.0) as usize;
        let ix1 = (((x1 - grid.x_min) / grid.hx).ceil().max(0.0) as usize).min(grid.nx - 1);
        let iy0 = ((-y1) / grid.hy).floor().max(0.0) as usize;
        let iy1 = (((-y0) / grid.hy).ceil().max(0.0) as usize).min(grid.ny - 1);
        for iy in iy0..=iy1 {
            let y = grid.y(iy);
            for ix in ix0..=ix1 {
                out[grid.index(iy, ix)] += scale * self.value(t, grid.x(ix), y);
            }
        }
    }
}

/// Receives `u^n` after every step.
pub trait StepObserver {
    fn observe(&mut self, step: usize, u: &[f64]);
}

impl<F: FnMut(usize, &[f64])> StepObserver for F {
    fn observe(&mut self, step: usize, u: &[f64]) {
        self(step, u)
    }
}

pub struct NoForcing;

impl BoundaryForcing for NoForcing {
    fn eval(&self, _t: f64, _grid: &Grid, _out: &mut [f64]) {}
    fn time_support(&self) -> (f64, f64) {
        (f64::INFINITY, f64::NEG_INFINITY)
    }
}

impl InteriorForcing for NoForcing {
    fn value(&self, _t: f64, _x: f64, _y: f64) -> f64 {
        0.0
    }
    fn time_support(&self) -> (f64, f64) {
        (f64::INFINITY, f64::NEG_INFINITY)
    }
    fn spatial_support(&self) -> [f64; 4] {
        [0.0, 0.0, 0.0, 0.0]
    }
    fn add_scaled(&self, _t: f64, _grid: &Grid, _scale: f64, _out: &mut [f64]) {}
}

/// Space-time Gaussian `amp exp(-a_t (t-t_c)^2 - a_x (x-x_c)^2)` on the surface,
/// switched on for `t` in `[t_lo, t_hi]` and truncated at `radius` standard widths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulse {
    pub t_c: f64,
    pub x_c: f64,
    pub a_t: f64,
    pub a_x: f64,
    pub amp: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub radius: f64,
}

impl GaussianPulse {
    pub fn reach_t(&self) -> f64 {
        self.radius / (2.0 * self.a_t).sqrt()
    }

    pub fn reach_x(&self) -> f64 {
        self.radius / (2.0 * self.a_x).sqrt()
    }

    pub fn temporal(&self, t: f64) -> f64 {
        let d = t - self.t_c;
        if t < self.t_lo - 1e-9 || t > self.t_hi + 1e-9 || d.abs() > self.reach_t() {
            0.0
        } else {
            (-self.a_t * d * d).exp()
        }
    }

    pub fn spatial(&self, x: f64) -> f64 {
        let d = x - self.x_c;
        if d.abs() > self.reach_x() {
            0.0
        } else {
            (-self.a_x * d * d).exp()
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.amp * self.temporal(t) * self.spatial(x)
    }

    /// Temporal factor as injected: halved at the switching times.
    pub fn injected(&self, t: f64) -> f64 {
        let g = self.temporal(t);
        if near(t, self.t_lo) || near(t, self.t_hi) {
            0.5 * g
        } else {
            g
        }
    }
}

pub(crate) fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Linear combination of Gaussian pulses.
#[derive(Clone, Debug, Default)]
pub struct PulseSum {
    pub pulses: Vec<GaussianPulse>,
}

impl BoundaryForcing for PulseSum {
    fn eval(&self, t: f64, grid: &Grid, out: &mut [f64]) {
        for p in &self.pulses {
            let g = p.amp * p.injected(t);
            if g == 0.0 {
                continue;
            }
            let r = p.reach_x();
            let ix0 = ((p.x_c - r - grid.x_min) / grid.hx).ceil().max(0.0) as usize;
            let ix1 = (((p.x_c + r - grid.x_min) / grid.hx).floor().max(0.0) as usize).min(grid.nx - 1);
            for (ix, o) in out.iter_mut().enumerate().take(ix1 + 1).skip(ix0) {
                *o += g * p.spatial(grid.x(ix));
            }
        }
    }

    fn time_support(&self) -> (f64, f64) {
        self.pulses
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (
                    a.min((p.t_c - p.reach_t()).max(p.t_lo)),
                    b.max((p.t_c + p.reach_t()).min(p.t_hi)),
                )
            })
    }
}

impl BoundaryForcing for GaussianPulse {
    fn eval(&self, t: f64, grid: &Grid, out: &mut [f64]) {
        PulseSum { pulses: vec![*self] }.eval(t, grid, out)
    }
    fn time_support(&self) -> (f64, f64) {
        (
            (self.t_c - self.reach_t()).max(self.t_lo),
            (self.t_c + self.reach_t()).min(self.t_hi),
        )
    }
}

/// Neumann data given by samples, interpolated bilinearly.
pub struct SampledBoundary<'a>(pub &'a BoundarySignal);

impl BoundaryForcing for SampledBoundary<'_> {
    fn eval(&self, t: f64, grid: &Grid, out: &mut [f64]) {
        let s = self.0;
        let (xa, xb) = (s.x(0), s.x(s.nx() - 1));
        let w = if near(t, 0.0) || near(t, s.duration()) {
            0.5
        } else {
            1.0
        };
        for (ix, o) in out.iter_mut().enumerate() {
            let x = grid.x(ix);
            if x >= xa - 1e-9 && x <= xb + 1e-9 {
                *o += w * s.value_at(t, x);
            }
        }
    }
    fn time_support(&self) -> (f64, f64) {
        (0.0, self.0.duration())
    }
}

/// Interior Gaussian `amp exp(-a_t (t-t_c)^2 - a_x |p - p_c|^2)` for `t >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSource {
    pub t_c: f64,
    pub x_c: f64,
    /// Euclidean depth of the centre (positive downwards).
    pub depth_c: f64,
    pub a_t: f64,
    pub a_x: f64,
    pub amp: f64,
    pub radius: f64,
}

impl GaussianSource {
    fn reach_t(&self) -> f64 {
        self.radius / (2.0 * self.a_t).sqrt()
    }
    fn reach_x(&self) -> f64 {
        self.radius / (2.0 * self.a_x).sqrt()
    }
}

impl InteriorForcing for GaussianSource {
    fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        let dt = t - self.t_c;
        if t < -1e-9 || dt.abs() > self.reach_t() {
            return 0.0;
        }
        let (dx, dy) = (x - self.x_c, y + self.depth_c);
        let r2 = dx * dx + dy * dy;
        if r2 > self.reach_x() * self.reach_x() {
            return 0.0;
        }
        self.amp * (-self.a_t * dt * dt - self.a_x * r2).exp()
    }
    fn time_support(&self) -> (f64, f64) {
        ((self.t_c - self.reach_t()).max(0.0), self.t_c + self.reach_t())
    }
    fn spatial_support(&self) -> [f64; 4] {
        let r = self.reach_x();
        [self.x_c - r, self.x_c + r, -self.depth_c - r, -self.depth_c + r]
    }
    fn weight(&self, t: f64) -> f64 {
        if near(t, 0.0) {
            0.5
        } else {
            1.0
        }
    }
}

/// `F(t - delay)`, zero before the delay and after `cut`.
pub struct Delayed<'a> {
    pub inner: &'a dyn InteriorForcing,
    pub delay: f64,
    pub cut: f64,
}

impl InteriorForcing for Delayed<'_> {
    fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        if t < self.delay - 1e-9 || t > self.cut + 1e-9 {
            0.0
        } else {
            self.inner.value(t - self.delay, x, y)
        }
    }
    fn time_support(&self) -> (f64, f64) {
        let (a, b) = self.inner.time_support();
        ((a + self.delay).max(self.delay), (b + self.delay).min(self.cut))
    }
    fn spatial_support(&self) -> [f64; 4] {
        self.inner.spatial_support()
    }
    fn weight(&self, t: f64) -> f64 {
        let w = self.inner.weight(t - self.delay);
        if near(t, self.cut) {
            0.5 * w
        } else {
            w
        }
    }
}

/// `F(total - t)` for `t` in `[0, total]`.
pub struct Reversed<'a> {
    pub inner: &'a dyn InteriorForcing,
    pub total: f64,
}

impl InteriorForcing for Reversed<'_> {
    fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        if t < 0.0 || t > self.total {
            0.0
        } else {
            self.inner.value(self.total - t, x, y)
        }
    }
    fn time_support(&self) -> (f64, f64) {
        let (a, b) = self.inner.time_support();
        ((self.total - b).max(0.0), (self.total - a).min(self.total))
    }
    fn spatial_support(&self) -> [f64; 4] {
        self.inner.spatial_support()
    }
    fn weight(&self, t: f64) -> f64 {
        self.inner.weight(self.total - t)
    }
}

/// Interior forcing sampled on a coarse time grid as full-grid frames,
/// interpolated linearly in time.
#[derive(Clone, Debug)]
pub struct SampledInterior {
    pub grid: Grid,
    pub dt: f64,
    pub frames: Vec<Array2<f64>>,
}

impl InteriorForcing for SampledInterior {
    fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        let s = t / self.dt;
        if s < 0.0 || s > (self.frames.len() - 1) as f64 {
            return 0.0;
        }
        let ix = self.grid.nearest_column(x);
        let iy = ((-y / self.grid.hy).round().max(0.0) as usize).min(self.grid.ny - 1);
        let k = (s.floor() as usize).min(self.frames.len().saturating_sub(2));
        let a = s - k as f64;
        let f0 = self.frames[k][[iy, ix]];
        let f1 = self.frames.get(k + 1).map_or(0.0, |f| f[[iy, ix]]);
        (1.0 - a) * f0 + a * f1
    }
    fn time_support(&self) -> (f64, f64) {
        (0.0, (self.frames.len() - 1) as f64 * self.dt)
    }
    fn spatial_support(&self) -> [f64; 4] {
        [self.grid.x_min, self.grid.x_max(), -self.grid.depth(), 0.0]
    }
    fn weight(&self, t: f64) -> f64 {
        let end = (self.frames.len() - 1) as f64 * self.dt;
        if near(t, 0.0) || near(t, end) {
            0.5
        } else {
            1.0
        }
    }
    fn add_scaled(&self, t: f64, grid: &Grid, scale: f64, out: &mut [f64]) {
        if !grid.same_geometry(&self.grid) {
            let scale = scale * self.weight(t);
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    out[grid.index(iy, ix)] += scale * self.value(t, grid.x(ix), grid.y(iy));
                }
            }
            return;
        }
        let s = t / self.dt;
        if s < -1e-9 || s > (self.frames.len() - 1) as f64 + 1e-9 {
            return;
        }
        let scale = scale * self.weight(t);
        let s = s.clamp(0.0, (self.frames.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.frames.len().saturating_sub(2));
        let a = s - k as f64;
        let f0 = &self.frames[k];
        for (o, v) in out.iter_mut().zip(f0.iter()) {
            *o += scale * (1.0 - a) * v;
        }
        if let Some(f1) = self.frames.get(k + 1) {
            for (o, v) in out.iter_mut().zip(f1.iter()) {
                *o += scale * a * v;
            }
        }
    }
}

/// Leapfrog integrator over an immutable medium.
#[derive(Clone, Debug)]
pub struct WaveSolver {
    pub grid: Grid,
    pub dt: f64,
    kappa: Vec<f64>,
    top_gain: Vec<f64>,
    inv_c2: Vec<f64>,
    weights: Vec<f64>,
}

impl WaveSolver {
    /// `gamma_half_width` limits where surface data enter (`|x| <= l`).
    pub fn new(c: &WavespeedField, gamma_half_width: f64, dt: f64) -> Result<Self> {
        c.validate()?;
        let g = c.grid;
        let limit = CFL_LIMIT * g.hx.min(g.hy) / c.max();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, limit });
        }
        let kappa = c.values.iter().map(|v| dt * dt * v * v).collect();
        let top_gain = (0..g.nx)
            .map(|ix| {
                if g.x(ix).abs() <= gamma_half_width + 1e-9 * g.hx {
                    dt * dt * 2.0 * c.at(0, ix) / g.hy
                } else {
                    0.0
                }
            })
            .collect();
        let inv_c2 = c.values.iter().map(|v| 1.0 / (v * v)).collect();
        let mut weights = vec![0.0; g.len()];
        for iy in 0..g.ny {
            let wy = if iy == 0 || iy == g.ny - 1 { 0.5 } else { 1.0 };
            for ix in 0..g.nx {
                let wx = if ix == 0 || ix == g.nx - 1 { 0.5 } else { 1.0 };
                weights[g.index(iy, ix)] = wx * wy * g.hx * g.hy;
            }
        }
        Ok(WaveSolver {
            grid: g,
            dt,
            kappa,
            top_gain,
            inv_c2,
            weights,
        })
    }

    pub fn step_of(&self, t: f64) -> Result<usize> {
        whole_steps(t, self.dt)
    }

    /// Writes `Δ_h u` (ghost-mirrored, no boundary data) into `out`.
    pub fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        for iy in 0..ny {
            let up = if iy == 0 { 1 } else { iy - 1 };
            let dn = if iy == ny - 1 { ny - 2 } else { iy + 1 };
            let row = &u[iy * nx..(iy + 1) * nx];
            let ru = &u[up * nx..(up + 1) * nx];
            let rd = &u[dn * nx..(dn + 1) * nx];
            let o = &mut out[iy * nx..(iy + 1) * nx];
            for ix in 1..nx - 1 {
                o[ix] = cx * (row[ix - 1] + row[ix + 1] - 2.0 * row[ix]) + cy * (ru[ix] + rd[ix] - 2.0 * row[ix]);
            }
            o[0] = cx * 2.0 * (row[1] - row[0]) + cy * (ru[0] + rd[0] - 2.0 * row[0]);
            let l = nx - 1;
            o[l] = cx * 2.0 * (row[l - 1] - row[l]) + cy * (ru[l] + rd[l] - 2.0 * row[l]);
        }
    }

    /// Runs from rest to step `n_end`, calling `obs` with `u^n` for every `n` in `0..=n_end`.
    pub fn run(
        &self,
        boundary: &dyn BoundaryForcing,
        interior: &dyn InteriorForcing,
        n_end: usize,
        obs: &mut dyn StepObserver,
    ) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let (b0, _) = boundary.time_support();
        let (f0, _) = interior.time_support();
        let start = b0.min(f0);
        let n_start = if start.is_finite() {
            ((start / self.dt).floor().max(0.0) as usize).min(n_end)
        } else {
            n_end
        };
        let zeros = vec![0.0; g.len()];
        for n in 0..=n_start {
            obs.observe(n, &zeros);
        }
        let mut prev = vec![0.0; g.len()];
        let mut cur = vec![0.0; g.len()];
        let mut top = vec![0.0; nx];
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        let dt2 = self.dt * self.dt;
        for n in n_start..n_end {
            let t = n as f64 * self.dt;
            for iy in 0..ny {
                let up = if iy == 0 { 1 } else { iy - 1 };
                let dn = if iy == ny - 1 { ny - 2 } else { iy + 1 };
                let row = &cur[iy * nx..(iy + 1) * nx];
                let ru = &cur[up * nx..(up + 1) * nx];
                let rd = &cur[dn * nx..(dn + 1) * nx];
                let k = &self.kappa[iy * nx..(iy + 1) * nx];
                let o = &mut prev[iy * nx..(iy + 1) * nx];
                for ix in 1..nx - 1 {
                    let lap = cx * (row[ix - 1] + row[ix + 1] - 2.0 * row[ix]) + cy * (ru[ix] + rd[ix] - 2.0 * row[ix]);
                    o[ix] = 2.0 * row[ix] - o[ix] + k[ix] * lap;
                }
                let lap0 = cx * 2.0 * (row[1] - row[0]) + cy * (ru[0] + rd[0] - 2.0 * row[0]);
                o[0] = 2.0 * row[0] - o[0] + k[0] * lap0;
                let l = nx - 1;
                let lapl = cx * 2.0 * (row[l - 1] - row[l]) + cy * (ru[l] + rd[l] - 2.0 * row[l]);
                o[l] = 2.0 * row[l] - o[l] + k[l] * lapl;
            }
            top.iter_mut().for_each(|v| *v = 0.0);
            boundary.eval(t, &g, &mut top);
            for ix in 0..nx {
                prev[ix] += self.top_gain[ix] * top[ix];
            }
            interior.add_scaled(t, &g, dt2, &mut prev);
            std::mem::swap(&mut prev, &mut cur);
            obs.observe(n + 1, &cur);
        }
    }

    /// Discrete energy between two consecutive steps `u^n`, `u^{n+1}`;
    /// conserved exactly by the scheme in the absence of forcing.
    pub fn energy(&self, u_n: &[f64], u_np1: &[f64]) -> f64 {
        let mut lap = vec![0.0; self.grid.len()];
        self.laplacian(u_n, &mut lap);
        let mut kin = 0.0;
        let mut pot = 0.0;
        for k in 0..u_n.len() {
            let v = (u_np1[k] - u_n[k]) / self.dt;
            kin += self.weights[k] * self.inv_c2[k] * v * v;
            pot -= self.weights[k] * u_np1[k] * lap[k];
        }
        0.5 * (kin + pot)
    }
}

/// Snapshot of the whole grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub grid: Grid,
    pub values: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct SnapHeader {
    kind: String,
    grid: Grid,
    time: f64,
    mask_id: String,
    /// `[row, first column, end column)` runs of masked nodes in storage order.
    runs: Vec<[usize; 3]>,
}

impl Snapshot {
    pub fn zeros(grid: Grid, time: f64) -> Self {
        Snapshot {
            time,
            grid,
            values: Array2::zeros((grid.ny, grid.nx)),
        }
    }

    pub fn masked(&self, mask: &RegionMask) -> Snapshot {
        let mut s = self.clone();
        for (v, &inside) in s.values.iter_mut().zip(mask.inside.iter()) {
            if !inside {
                *v = 0.0;
            }
        }
        s
    }

    pub fn save(&self, path: &std::path::Path, mask: &RegionMask) -> Result<()> {
        if !self.grid.same_geometry(&mask.grid) {
            return Err(Error::ShapeMismatch("snapshot and mask grids differ".into()));
        }
        let g = self.grid;
        let mut runs = Vec::new();
        let mut payload = Vec::new();
        for iy in 0..g.ny {
            let mut ix = 0;
            while ix < g.nx {
                if mask.contains(iy, ix) {
                    let s = ix;
                    while ix < g.nx && mask.contains(iy, ix) {
                        payload.push(self.values[[iy, ix]]);
                        ix += 1;
                    }
                    runs.push([iy, s, ix]);
                } else {
                    ix += 1;
                }
            }
        }
        let header = SnapHeader {
            kind: "snap".into(),
            grid: g,
            time: self.time,
            mask_id: mask.id(),
            runs,
        };
        io::write_container(path, &header, &payload)
    }

    /// Reads a snapshot; nodes outside the stored mask are zero.
    pub fn load(path: &std::path::Path) -> Result<(Snapshot, String)> {
        let (h, payload): (SnapHeader, Vec<f64>) = io::read_container(path)?;
        if h.kind != "snap" {
            return Err(Error::Format(format!("expected snap, found {}", h.kind)));
        }
        let mut s = Snapshot::zeros(h.grid, h.time);
        let mut it = payload.iter();
        for [iy, a, b] in h.runs {
            for ix in a..b {
                s.values[[iy, ix]] = *it
                    .next()
                    .ok_or_else(|| Error::Format("snapshot payload too short".into()))?;
            }
        }
        if it.next().is_some() {
            return Err(Error::Format("snapshot payload too long".into()));
        }
        Ok((s, h.mask_id))
    }
}

/// What a solve should return.
#[derive(Clone, Debug, Default)]
pub struct OutputRequest {
    /// Surface positions to record (must be grid nodes).
    pub trace_x: Vec<f64>,
    /// Trace sampling interval (a multiple of the solver step).
    pub trace_dt: f64,
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct WavefieldRecord {
    pub trace: Option<BoundarySignal>,
    pub snapshots: Vec<Snapshot>,
}

struct Recorder {
    columns: Vec<usize>,
    every: usize,
    trace: Vec<f64>,
    snap_steps: Vec<usize>,
    snaps: Vec<Option<Vec<f64>>>,
}

impl StepObserver for Recorder {
    fn observe(&mut self, step: usize, u: &[f64]) {
        if !self.columns.is_empty() && step.is_multiple_of(self.every) {
            self.trace.extend(self.columns.iter().map(|&ix| u[ix]));
        }
        for (k, &s) in self.snap_steps.iter().enumerate() {
            if s == step {
                self.snaps[k] = Some(u.to_vec());
            }
        }
    }
}

impl WaveSolver {
    fn record(
        &self,
        boundary: &dyn BoundaryForcing,
        interior: &dyn InteriorForcing,
        t_end: f64,
        req: &OutputRequest,
    ) -> Result<WavefieldRecord> {
        let g = self.grid;
        let n_end = self.step_of(t_end)?;
        let mut snap_steps = Vec::new();
        for &t in &req.snapshot_times {
            if t < -1e-12 || t > t_end + 1e-12 {
                return Err(Error::TimeOutOfRange { t, t_end });
            }
            snap_steps.push(self.step_of(t)?);
        }
        let mut columns = Vec::new();
        for &x in &req.trace_x {
            columns.push(
                g.column_of(x)
                    .ok_or_else(|| Error::InvalidParameter(format!("receiver at x = {x} is not a grid node")))?,
            );
        }
        let every = if columns.is_empty() {
            1
        } else {
            whole_steps(req.trace_dt, self.dt)?.max(1)
        };
        let mut rec = Recorder {
            columns,
            every,
            trace: Vec::new(),
            snaps: vec![None; snap_steps.len()],
            snap_steps,
        };
        self.run(boundary, interior, n_end, &mut rec);
        let trace = if rec.columns.is_empty() {
            None
        } else {
            let nr = rec.columns.len();
            let nt = rec.trace.len() / nr;
            let dx = if nr > 1 { req.trace_x[1] - req.trace_x[0] } else { 1.0 };
            Some(BoundarySignal {
                dt: every as f64 * self.dt,
                x0: req.trace_x[0],
                dx,
                data: Array2::from_shape_vec((nt, nr), rec.trace).unwrap(),
            })
        };
        let snapshots = rec
            .snaps
            .into_iter()
            .zip(req.snapshot_times.iter())
            .map(|(v, &t)| Snapshot {
                time: t,
                grid: g,
                values: Array2::from_shape_vec((g.ny, g.nx), v.unwrap()).unwrap(),
            })
            .collect();
        Ok(WavefieldRecord { trace, snapshots })
    }

    /// Wavefield driven by Neumann data on the surface.
    pub fn solve_neumann(&self, f: &dyn BoundaryForcing, t_end: f64, req: &OutputRequest) -> Result<WavefieldRecord> {
        self.record(f, &NoForcing, t_end, req)
    }

    /// Wavefield driven by an interior source with homogeneous Neumann walls.
    pub fn solve_interior(&self, f: &dyn InteriorForcing, t_end: f64, req: &OutputRequest) -> Result<WavefieldRecord> {
        let g = self.grid;
        let [x0, x1, y0, y1] = f.spatial_support();
        let (_, t1) = f.time_support();
        if t1 >= 0.0 && (x1 < g.x_min || x0 > g.x_max() || y0 > 0.0 || y1 < -g.depth()) {
            return Err(Error::Support("interior source lies outside the grid".into()));
        }
        self.record(&NoForcing, f, t_end, req)
    }

    /// Final-value solution `v^H` on `[0, t_final]`, obtained as `R w^{RH}`.
    pub fn solve_final_value(
        &self,
        h: &dyn InteriorForcing,
        t_final: f64,
        req: &OutputRequest,
    ) -> Result<WavefieldRecord> {
        let reversed = Reversed {
            inner: h,
            total: t_final,
        };
        let mut rreq = req.clone();
        rreq.snapshot_times = req.snapshot_times.iter().map(|t| t_final - t).collect();
        let mut rec = self.solve_interior(&reversed, t_final, &rreq)?;
        for (s, &t) in rec.snapshots.iter_mut().zip(req.snapshot_times.iter()) {
            s.time = t;
        }
        if let Some(tr) = rec.trace.as_mut() {
            tr.data.invert_axis(ndarray::Axis(0));
            tr.data = tr.data.as_standard_layout().to_owned();
        }
        Ok(rec)
    }
}

/// Largest time step not exceeding the stability limit that divides `sample_dt`.
pub fn stable_step(c: &WavespeedField, sample_dt: f64) -> f64 {
    let g = c.grid;
    let limit = CFL_LIMIT * g.hx.min(g.hy) / c.max();
    let k = (sample_dt / limit).ceil().max(1.0);
    sample_dt / k
}
