//! Operators on sampled boundary signals: reversal `R`, the time filter `J`,
//! zero extension `Θ`, restriction `ρ`, window projection `P` and delay `Z`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::signal::{whole_steps, BoundarySignal};

/// Sub-interval `(start, end]` of `[0, tau]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalWindow {
    pub start: f64,
    pub end: f64,
    pub tau: f64,
}

impl SignalWindow {
    pub fn new(start: f64, end: f64, tau: f64) -> Result<Self> {
        if !(0.0 <= start && start < end && end <= tau + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "window ({start}, {end}] is not inside [0, {tau}]"
            )));
        }
        Ok(SignalWindow { start, end, tau })
    }

    /// The last `r` of `[0, tau]`.
    pub fn last(r: f64, tau: f64) -> Result<Self> {
        Self::new(tau - r, tau, tau)
    }
}

fn check_duration(f: &BoundarySignal, tau: f64) -> Result<usize> {
    let n = whole_steps(tau, f.dt)?;
    if f.nt() != n + 1 {
        return Err(Error::ShapeMismatch(format!(
            "signal spans [0, {}], expected [0, {tau}]",
            f.duration()
        )));
    }
    Ok(n)
}

/// `(R f)(t) = f(tau - t)`.
pub fn time_reverse(f: &BoundarySignal, tau: f64) -> Result<BoundarySignal> {
    check_duration(f, tau)?;
    let mut out = f.clone();
    let n = f.nt();
    for l in 0..n {
        out.data.row_mut(l).assign(&f.data.row(n - 1 - l));
    }
    Ok(out)
}

/// `(J f)(t) = 1/2 ∫_t^{2 tau - t} f(s) ds` for `t` in `[0, tau]`, by the trapezoid rule.
pub fn time_filter(f: &BoundarySignal, tau: f64) -> Result<BoundarySignal> {
    let n = whole_steps(tau, f.dt)?;
    if f.nt() < 2 * n + 1 {
        return Err(Error::SignalTooShort {
            have: f.duration(),
            need: 2.0 * tau,
        });
    }
    let nx = f.nx();
    let mut out = BoundarySignal::zeros(f.dt, f.x0, f.dx, n + 1, nx);
    // Cumulative trapezoid integral from 0, one column at a time.
    let mut cum = vec![0.0; 2 * n + 1];
    for k in 0..nx {
        cum[0] = 0.0;
        for l in 1..=2 * n {
            cum[l] = cum[l - 1] + 0.5 * f.dt * (f.data[[l - 1, k]] + f.data[[l, k]]);
        }
        for l in 0..=n {
            out.data[[l, k]] = 0.5 * (cum[2 * n - l] - cum[l]);
        }
    }
    Ok(out)
}

/// Extends a signal on `[0, tau]` by zero to `[0, 2 tau]`.
pub fn zero_extend(f: &BoundarySignal, tau: f64) -> Result<BoundarySignal> {
    let n = check_duration(f, tau)?;
    let mut out = BoundarySignal::zeros(f.dt, f.x0, f.dx, 2 * n + 1, f.nx());
    out.data.slice_mut(ndarray::s![..=n, ..]).assign(&f.data);
    Ok(out)
}

/// Restriction to `[0, tau]`.
pub fn restrict(f: &BoundarySignal, tau: f64) -> Result<BoundarySignal> {
    let n = whole_steps(tau, f.dt)?;
    if f.nt() < n + 1 {
        return Err(Error::SignalTooShort {
            have: f.duration(),
            need: tau,
        });
    }
    Ok(BoundarySignal {
        data: f.data.slice(ndarray::s![..=n, ..]).to_owned(),
        ..*f
    })
}

/// Zeroes every sample outside the window.
pub fn window_project(f: &BoundarySignal, w: &SignalWindow) -> Result<BoundarySignal> {
    check_duration(f, w.tau)?;
    let lo = whole_steps(w.start, f.dt)?;
    let hi = whole_steps(w.end, f.dt)?;
    let mut out = f.clone();
    for l in 0..f.nt() {
        if l <= lo || l > hi {
            out.data.row_mut(l).fill(0.0);
        }
    }
    Ok(out)
}

/// `(Z_s f)(t) = f(t - s)`, zero for `t < s`, on the same time axis.
pub fn delay(f: &BoundarySignal, s: f64) -> Result<BoundarySignal> {
    let m = whole_steps(s.abs(), f.dt)?;
    if s < 0.0 {
        return Err(Error::InvalidParameter(format!("negative delay {s}")));
    }
    let mut out = f.clone();
    out.data.fill(0.0);
    let n = f.nt();
    for l in m..n {
        out.data.row_mut(l).assign(&f.data.row(l - m));
    }
    Ok(out)
}

/// Coefficients of a signal delayed by `m` pulse spacings: the temporal index moves
/// up by `m`, and whatever leaves the range is dropped. Exact for pulses that are
/// not cut by the ends of the interval.
pub fn shift_coefficients(c: &DVector<f64>, nt: usize, nx: usize, m: usize) -> DVector<f64> {
    let mut out = DVector::zeros(nt * nx);
    for i in 0..nt.saturating_sub(m) {
        for j in 0..nx {
            out[(i + m) * nx + j] = c[i * nx + j];
        }
    }
    out
}

/// Coefficients under time reversal when the centre times are symmetric in `(0, tau)`.
pub fn reverse_coefficients(c: &DVector<f64>, nt: usize, nx: usize) -> DVector<f64> {
    let mut out = DVector::zeros(nt * nx);
    for i in 0..nt {
        for j in 0..nx {
            out[(nt - 1 - i) * nx + j] = c[i * nx + j];
        }
    }
    out
}
