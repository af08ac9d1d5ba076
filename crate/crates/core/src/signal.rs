use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Samples of a function on `[0, (nt-1) dt] x {x0 + j dx}`, stored as `(nt, nx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySignal {
    pub dt: f64,
    pub x0: f64,
    pub dx: f64,
    pub data: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    dt: f64,
    nt: usize,
    x: Vec<f64>,
    channels: usize,
}

impl BoundarySignal {
    pub fn zeros(dt: f64, x0: f64, dx: f64, nt: usize, nx: usize) -> Self {
        BoundarySignal {
            dt,
            x0,
            dx,
            data: Array2::zeros((nt, nx)),
        }
    }

    pub fn from_fn(dt: f64, x0: f64, dx: f64, nt: usize, nx: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = Array2::from_shape_fn((nt, nx), |(k, j)| f(k as f64 * dt, x0 + j as f64 * dx));
        BoundarySignal { dt, x0, dx, data }
    }

    pub fn nt(&self) -> usize {
        self.data.nrows()
    }

    pub fn nx(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration(&self) -> f64 {
        (self.nt() - 1) as f64 * self.dt
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.nx()).map(|j| self.x(j)).collect()
    }

    /// Number of samples spanning a duration that must be a whole number of steps.
    pub fn steps_for(&self, duration: f64) -> Result<usize> {
        whole_steps(duration, self.dt)
    }

    pub fn same_axes(&self, other: &BoundarySignal) -> bool {
        self.data.dim() == other.data.dim()
            && (self.dt - other.dt).abs() < 1e-12
            && (self.x0 - other.x0).abs() < 1e-12
            && (self.dx - other.dx).abs() < 1e-12
    }

    /// Bilinear interpolation; zero outside the sampled rectangle.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let (nt, nx) = self.data.dim();
        let s = t / self.dt;
        let r = (x - self.x0) / self.dx;
        if s < -1e-9 || r < -1e-9 || s > (nt - 1) as f64 + 1e-9 || r > (nx - 1) as f64 + 1e-9 {
            return 0.0;
        }
        let s = s.clamp(0.0, (nt - 1) as f64);
        let r = r.clamp(0.0, (nx - 1) as f64);
        let (k, j) = (
            (s.floor() as usize).min(nt.saturating_sub(2)),
            (r.floor() as usize).min(nx.saturating_sub(2)),
        );
        let (a, b) = (s - k as f64, r - j as f64);
        let at = |k: usize, j: usize| self.data[[k.min(nt - 1), j.min(nx - 1)]];
        (1.0 - a) * ((1.0 - b) * at(k, j) + b * at(k, j + 1)) + a * ((1.0 - b) * at(k + 1, j) + b * at(k + 1, j + 1))
    }

    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_traces(path, std::slice::from_ref(self))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut v = load_traces(path)?;
        if v.len() != 1 {
            return Err(Error::Format(format!("expected one channel, found {}", v.len())));
        }
        Ok(v.remove(0))
    }
}

/// Writes several traces that share time axis and receivers into one `.trace` file.
pub fn save_traces(path: &std::path::Path, traces: &[BoundarySignal]) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidParameter("no traces to write".into()))?;
    if traces.iter().any(|t| !t.same_axes(first)) {
        return Err(Error::ShapeMismatch("traces do not share axes".into()));
    }
    let header = TraceHeader {
        kind: "trace".into(),
        dt: first.dt,
        nt: first.nt(),
        x: first.positions(),
        channels: traces.len(),
    };
    let payload: Vec<f64> = traces.iter().flat_map(|t| t.data.iter().cloned()).collect();
    io::write_container(path, &header, &payload)
}

pub fn load_traces(path: &std::path::Path) -> Result<Vec<BoundarySignal>> {
    let (h, payload): (TraceHeader, Vec<f64>) = io::read_container(path)?;
    if h.kind != "trace" {
        return Err(Error::Format(format!("expected trace, found {}", h.kind)));
    }
    let nx = h.x.len();
    let per = h.nt * nx;
    if payload.len() != per * h.channels {
        return Err(Error::Format(format!(
            "trace payload has {} values, header implies {}",
            payload.len(),
            per * h.channels
        )));
    }
    let (x0, dx) = match nx {
        0 => return Err(Error::Format("trace without receivers".into())),
        1 => (h.x[0], 1.0),
        _ => (h.x[0], h.x[1] - h.x[0]),
    };
    Ok(payload
        .chunks_exact(per.max(1))
        .map(|c| BoundarySignal {
            dt: h.dt,
            x0,
            dx,
            data: Array2::from_shape_vec((h.nt, nx), c.to_vec()).unwrap(),
        })
        .collect())
}

/// `duration / dt` when it is a whole number.
pub fn whole_steps(duration: f64, dt: f64) -> Result<usize> {
    let s = duration / dt;
    let n = s.round();
    if (s - n).abs() > 1e-6 || n < 0.0 {
        return Err(Error::MisalignedShift { shift: duration, dt });
    }
    Ok(n as usize)
}

/// Trapezoid weights for `n` samples spaced `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n == 1 {
        w[0] = 0.0;
    } else if n > 1 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}
