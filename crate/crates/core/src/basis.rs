//! Space-time Gaussian pulse family on the accessible segment, its Gram matrix,
//! and projections onto it.
//!
//! Every pulse factorizes as `C_i g_i(t) * C_x g_j(x)`, and so does the trapezoid
//! quadrature on the receiver grid. The Gram matrix is therefore the Kronecker
//! product of a temporal and a spatial factor, and both are factorized separately.
//! Coefficients are stored as `(n_t, n_x)` grids and flattened time-major:
//! index `m = i * n_x + j`.

use std::ops::Range;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, WavespeedField};
use crate::error::{Error, Result};
use crate::signal::{trapezoid_weights, whole_steps, BoundarySignal};
use crate::wave_sim::GaussianPulse;

/// Truncation radius in standard deviations.
pub const PULSE_RADIUS: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseGrid {
    pub x_first: f64,
    pub dx: f64,
    pub nx: usize,
    pub t_first: f64,
    pub dt: f64,
    /// Number of centre times below the final time.
    pub nt: usize,
    pub a_t: f64,
    pub a_x: f64,
}

impl PulseGrid {
    /// Coarse family: spacing 0.1, `a = 350`.
    pub fn desk(spec: &DomainSpec) -> Self {
        Self::scaled(spec, 0.1, 350.0)
    }

    /// Sharp family: spacing 0.025, `a = 1382`, 241 positions on `[-3, 3]`.
    pub fn fine(spec: &DomainSpec) -> Self {
        PulseGrid {
            x_first: -3.0,
            nx: 241,
            ..Self::scaled(spec, 0.025, 1382.0)
        }
    }

    /// Centres every `spacing` in time starting at `spacing`, and in `x`
    /// symmetrically over the part of the accessible segment that keeps the
    /// truncated support inside it.
    pub fn scaled(spec: &DomainSpec, spacing: f64, a: f64) -> Self {
        let reach = PULSE_RADIUS / (2.0 * a).sqrt();
        let half = spec.gamma_half_width - reach;
        let m = ((half / spacing) + 1e-9).floor().max(0.0) as usize;
        let nt = ((spec.final_time / spacing) - 1e-9).floor() as usize;
        PulseGrid {
            x_first: -(m as f64) * spacing,
            dx: spacing,
            nx: 2 * m + 1,
            t_first: spacing,
            dt: spacing,
            nt,
            a_t: a,
            a_x: a,
        }
    }

    pub fn preset(name: &str, spec: &DomainSpec) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(spec)),
            "fine" => Ok(Self::fine(spec)),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn validate(&self, spec: &DomainSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.nx == 0 || self.nt == 0 || !(self.dx > 0.0) || !(self.dt > 0.0) {
            return bad("pulse grid is empty".into());
        }
        if !(self.a_t > 0.0 && self.a_x > 0.0) {
            return bad("pulse sharpness must be positive".into());
        }
        let l = spec.gamma_half_width;
        if self.x_center(0) <= -l || self.x_center(self.nx - 1) >= l {
            return bad(format!("pulse centres leave (-{l}, {l})"));
        }
        if self.t_first <= 0.0 || self.t_center(self.nt - 1) >= spec.final_time {
            return bad("pulse centre times leave (0, T)".into());
        }
        Ok(())
    }

    pub fn x_center(&self, j: usize) -> f64 {
        self.x_first + j as f64 * self.dx
    }

    pub fn t_center(&self, i: usize) -> f64 {
        self.t_first + i as f64 * self.dt
    }

    pub fn reach_t(&self) -> f64 {
        PULSE_RADIUS / (2.0 * self.a_t).sqrt()
    }

    pub fn reach_x(&self) -> f64 {
        PULSE_RADIUS / (2.0 * self.a_x).sqrt()
    }

    /// Number of centre times strictly inside `(0, tau)`.
    pub fn nt_below(&self, tau: f64) -> usize {
        (0..self.nt).take_while(|&i| self.t_center(i) < tau - 1e-9).count()
    }

    /// Temporal indices with `t1 < t_i < t2`.
    pub fn window(&self, t1: f64, t2: f64) -> Range<usize> {
        let lo = (0..self.nt).find(|&i| self.t_center(i) > t1 + 1e-9).unwrap_or(self.nt);
        let hi = (0..self.nt)
            .rev()
            .find(|&i| self.t_center(i) < t2 - 1e-9)
            .map_or(lo, |i| i + 1);
        lo..hi.max(lo)
    }

    pub fn spatial(&self, j: usize, x: f64) -> f64 {
        let d = x - self.x_center(j);
        if d.abs() > self.reach_x() {
            0.0
        } else {
            (-self.a_x * d * d).exp()
        }
    }

    /// Unnormalized temporal factor, switched on over `[0, tau]`.
    pub fn temporal(&self, i: usize, t: f64, tau: f64) -> f64 {
        let d = t - self.t_center(i);
        if t < -1e-9 || t > tau + 1e-9 || d.abs() > self.reach_t() {
            0.0
        } else {
            (-self.a_t * d * d).exp()
        }
    }

    pub fn cut_at_zero(&self, i: usize) -> bool {
        self.t_center(i) - self.reach_t() < -1e-9
    }

    pub fn cut_at(&self, i: usize, tau: f64) -> bool {
        self.t_center(i) + self.reach_t() > tau + 1e-9
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Receiver positions on the accessible segment and the trace sampling interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receivers {
    pub x_first: f64,
    pub dx: f64,
    pub nx: usize,
    pub dt: f64,
    /// `1 / c` at each receiver (the surface measure of the metric).
    pub inv_c: Vec<f64>,
}

impl Receivers {
    /// Receivers every `dx` on `[-l, l]` sampled every `dt`.
    pub fn uniform(spec: &DomainSpec, c: &WavespeedField, dx: f64, dt: f64) -> Result<Self> {
        let l = spec.gamma_half_width;
        let n = whole_steps(2.0 * l, dx)? + 1;
        let x_first = -l;
        let mut inv_c = Vec::with_capacity(n);
        for k in 0..n {
            let x = x_first + k as f64 * dx;
            let ix = c
                .grid
                .column_of(x)
                .ok_or_else(|| Error::InvalidParameter(format!("receiver at x = {x} is not a grid node")))?;
            inv_c.push(1.0 / c.at(0, ix));
        }
        Ok(Receivers {
            x_first,
            dx,
            nx: n,
            dt,
            inv_c,
        })
    }

    /// Every 0.025 in `x` (each node of the desk grid), every 0.01 in `t`.
    pub fn desk(spec: &DomainSpec, c: &WavespeedField) -> Result<Self> {
        Self::uniform(spec, c, 0.025, 0.01)
    }

    /// Half the pulse spacing in `x`, a tenth in `t`.
    pub fn for_basis(spec: &DomainSpec, c: &WavespeedField, basis: &PulseGrid) -> Result<Self> {
        Self::uniform(spec, c, 0.5 * basis.dx, 0.1 * basis.dt)
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x_first + k as f64 * self.dx
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.nx).map(|k| self.x(k)).collect()
    }

    pub fn samples(&self, tau: f64) -> Result<usize> {
        Ok(whole_steps(tau, self.dt)? + 1)
    }

    /// Trapezoid weights in `x` including the surface measure.
    pub fn x_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.nx, self.dx)
            .into_iter()
            .zip(self.inv_c.iter())
            .map(|(w, ic)| w * ic)
            .collect()
    }

    pub fn zeros(&self, tau: f64) -> Result<BoundarySignal> {
        Ok(BoundarySignal::zeros(
            self.dt,
            self.x_first,
            self.dx,
            self.samples(tau)?,
            self.nx,
        ))
    }

    pub fn check(&self, s: &BoundarySignal, tau: f64) -> Result<()> {
        let nt = self.samples(tau)?;
        if s.nt() != nt
            || s.nx() != self.nx
            || (s.dt - self.dt).abs() > 1e-12
            || (s.x0 - self.x_first).abs() > 1e-9
            || (s.dx - self.dx).abs() > 1e-12
        {
            return Err(Error::ShapeMismatch(format!(
                "signal {}x{} (dt {}, dx {}) does not match receivers {}x{} (dt {}, dx {}) on [0, {tau}]",
                s.nt(),
                s.nx(),
                s.dt,
                s.dx,
                nt,
                self.nx,
                self.dt,
                self.dx
            )));
        }
        Ok(())
    }
}

/// Gram matrix of `S^tau` (pulses with centre time below `tau`, cut at `tau`),
/// together with the sampled, normalized pulse factors.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub tau: f64,
    pub basis: PulseGrid,
    pub receivers: Receivers,
    pub nt: usize,
    pub nx: usize,
    /// `C_i g_i(t_l)`, shape `(samples, nt)`.
    pub tfac: DMatrix<f64>,
    /// `C_x g_j(x_k)`, shape `(receivers, nx)`.
    pub xfac: DMatrix<f64>,
    pub t_weights: Vec<f64>,
    pub x_weights: Vec<f64>,
    /// Per-pulse temporal normalization `C_i`.
    pub t_norm: Vec<f64>,
    pub x_norm: f64,
    pub gt: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    chol_t: Cholesky<f64, Dyn>,
    chol_x: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    pub fn new(basis: &PulseGrid, receivers: &Receivers, tau: f64) -> Result<Self> {
        let nt = basis.nt_below(tau);
        let nx = basis.nx;
        if nt == 0 {
            return Err(Error::InvalidParameter(format!("no pulse centre below tau = {tau}")));
        }
        let ns = receivers.samples(tau)?;
        let t_weights = trapezoid_weights(ns, receivers.dt);
        let x_weights = receivers.x_weights();
        let mut tfac = DMatrix::from_fn(ns, nt, |l, i| basis.temporal(i, l as f64 * receivers.dt, tau));
        let t_norm: Vec<f64> = (0..nt)
            .map(|i| {
                let s: f64 = (0..ns).map(|l| t_weights[l] * tfac[(l, i)].powi(2)).sum();
                1.0 / s.sqrt()
            })
            .collect();
        for i in 0..nt {
            tfac.column_mut(i).scale_mut(t_norm[i]);
        }
        // A pulse in the middle of the segment sets the common spatial constant.
        let jm = nx / 2;
        let sx: f64 = (0..receivers.nx)
            .map(|k| x_weights[k] * basis.spatial(jm, receivers.x(k)).powi(2))
            .sum();
        let x_norm = 1.0 / sx.sqrt();
        let xfac = DMatrix::from_fn(receivers.nx, nx, |k, j| x_norm * basis.spatial(j, receivers.x(k)));
        let gt = weighted_gram(&tfac, &t_weights);
        let gx = weighted_gram(&xfac, &x_weights);
        let chol_t = Cholesky::new(gt.clone())
            .ok_or_else(|| Error::Factorization("temporal Gram factor is not positive definite".into()))?;
        let chol_x = Cholesky::new(gx.clone())
            .ok_or_else(|| Error::Factorization("spatial Gram factor is not positive definite".into()))?;
        Ok(GramMatrix {
            tau,
            basis: basis.clone(),
            receivers: receivers.clone(),
            nt,
            nx,
            tfac,
            xfac,
            t_weights,
            x_weights,
            t_norm,
            x_norm,
            gt,
            gx,
            chol_t,
            chol_x,
        })
    }

    pub fn dim(&self) -> usize {
        self.nt * self.nx
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nx + j
    }

    /// Normalization constant of pulse `(i, j)`.
    pub fn norm_const(&self, i: usize) -> f64 {
        self.t_norm[i] * self.x_norm
    }

    /// Pulse `(i, j)` as surface forcing with amplitude `scale * C`.
    pub fn pulse_forcing(&self, i: usize, j: usize, scale: f64) -> GaussianPulse {
        GaussianPulse {
            t_c: self.basis.t_center(i),
            x_c: self.basis.x_center(j),
            a_t: self.basis.a_t,
            a_x: self.basis.a_x,
            amp: scale * self.norm_const(i),
            t_lo: 0.0,
            t_hi: self.tau,
            radius: PULSE_RADIUS,
        }
    }

    /// Forcing for a coefficient vector.
    pub fn forcing(&self, c: &DVector<f64>) -> crate::wave_sim::PulseSum {
        let mut pulses = Vec::new();
        for i in 0..self.nt {
            for j in 0..self.nx {
                let v = c[self.index(i, j)];
                if v != 0.0 {
                    pulses.push(self.pulse_forcing(i, j, v));
                }
            }
        }
        crate::wave_sim::PulseSum { pulses }
    }

    pub fn build_pulse(&self, i: usize, j: usize) -> Result<BoundarySignal> {
        if i >= self.nt {
            return Err(Error::IndexOutOfRange { index: i, len: self.nt });
        }
        if j >= self.nx {
            return Err(Error::IndexOutOfRange { index: j, len: self.nx });
        }
        let mut s = self.receivers.zeros(self.tau)?;
        for l in 0..s.nt() {
            for k in 0..s.nx() {
                s.data[[l, k]] = self.tfac[(l, i)] * self.xfac[(k, j)];
            }
        }
        Ok(s)
    }

    /// `<phi_m, s>` for every pulse, as an `(nt, nx)` grid.
    pub fn inner_products(&self, s: &BoundarySignal) -> Result<DMatrix<f64>> {
        self.receivers.check(s, self.tau)?;
        let (ns, nr) = s.data.dim();
        let mut w = DMatrix::zeros(ns, nr);
        for l in 0..ns {
            for k in 0..nr {
                w[(l, k)] = self.t_weights[l] * self.x_weights[k] * s.data[[l, k]];
            }
        }
        Ok(self.tfac.tr_mul(&(w * &self.xfac)))
    }

    /// `G^{-1} B` for a coefficient grid.
    pub fn solve_grid(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.chol_t.solve(b);
        self.chol_x.solve(&y.transpose()).transpose()
    }

    /// `G C` for a coefficient grid.
    pub fn apply_grid(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gt * c * &self.gx
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.flatten(&self.solve_grid(&self.unflatten(b)))
    }

    pub fn apply(&self, c: &DVector<f64>) -> DVector<f64> {
        self.flatten(&self.apply_grid(&self.unflatten(c)))
    }

    /// `a^T G b`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.apply(b))
    }

    pub fn project(&self, s: &BoundarySignal) -> Result<DVector<f64>> {
        Ok(self.flatten(&self.solve_grid(&self.inner_products(s)?)))
    }

    /// Projection of the product signal `a(t_l) b(x_k)`, sampled on the receivers.
    pub fn project_separable(&self, a: &[f64], b: &[f64]) -> Result<DVector<f64>> {
        if a.len() != self.tfac.nrows() || b.len() != self.xfac.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "separable factors of length {} and {}, expected {} and {}",
                a.len(),
                b.len(),
                self.tfac.nrows(),
                self.xfac.nrows()
            )));
        }
        let wa = DVector::from_fn(a.len(), |l, _| self.t_weights[l] * a[l]);
        let wb = DVector::from_fn(b.len(), |k, _| self.x_weights[k] * b[k]);
        let ct = self.chol_t.solve(&self.tfac.tr_mul(&wa));
        let cx = self.chol_x.solve(&self.xfac.tr_mul(&wb));
        Ok(DVector::from_fn(self.dim(), |m, _| ct[m / self.nx] * cx[m % self.nx]))
    }

    pub fn reconstruct(&self, c: &DVector<f64>) -> BoundarySignal {
        let grid = self.unflatten(c);
        let m = &self.tfac * grid * self.xfac.transpose();
        let mut s = self.receivers.zeros(self.tau).expect("aligned by construction");
        for l in 0..s.nt() {
            for k in 0..s.nx() {
                s.data[[l, k]] = m[(l, k)];
            }
        }
        s
    }

    /// Weighted `L^2([0, tau] x Gamma)` pairing of two sampled signals.
    pub fn signal_inner(&self, a: &BoundarySignal, b: &BoundarySignal) -> Result<f64> {
        self.receivers.check(a, self.tau)?;
        self.receivers.check(b, self.tau)?;
        let mut s = 0.0;
        for l in 0..a.nt() {
            let mut row = 0.0;
            for k in 0..a.nx() {
                row += self.x_weights[k] * a.data[[l, k]] * b.data[[l, k]];
            }
            s += self.t_weights[l] * row;
        }
        Ok(s)
    }

    pub fn flatten(&self, g: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |m, _| g[(m / self.nx, m % self.nx)])
    }

    pub fn unflatten(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.nt, self.nx, |i, j| v[i * self.nx + j])
    }

    /// Flattened index range of the temporal window `t1 < t_i < t2`.
    pub fn window(&self, t1: f64, t2: f64) -> Range<usize> {
        let w = self.basis.window(t1, t2.min(self.tau));
        let hi = w.end.min(self.nt);
        w.start * self.nx..hi.max(w.start) * self.nx
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.gt.kronecker(&self.gx)
    }

    /// Lower Cholesky factor of the full matrix, `L_t (x) L_x`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol_t.l().kronecker(&self.chol_x.l())
    }

    /// Identifier built from the basis and receiver parameters.
    pub fn id(&self) -> String {
        let s =
            serde_json::to_string(&(&self.basis, &self.receivers.dx, &self.receivers.dt, self.tau)).unwrap_or_default();
        format!("{:016x}", fnv1a(s.as_bytes()))
    }
}

fn weighted_gram(f: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut fw = f.clone();
    for (l, &wl) in w.iter().enumerate() {
        fw.row_mut(l).scale_mut(wl);
    }
    let g = f.tr_mul(&fw);
    (&g + g.transpose()) * 0.5
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
