//! Hadamard-type family φ_n(r e^{iθ}) = r^{−n} e^{inθ} on a half disk.
//!
//! The interior L² norm over Ω = (1−ε, 1) × (−θ₁, θ₁) grows like q^{−(n−1)}
//! with q = 1 − ε, while the Cauchy data on the arc |θ| < θ₀ of the unit
//! circle grow only polynomially in n. Everything is evaluated in log-space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters of the family and of the norms measured on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HadamardConfig {
    pub n_max: usize,
    pub theta0: f64,
    pub theta1: f64,
    pub eps: f64,
    /// Sobolev order of the boundary norm on φ_n (∂_ν φ_n is measured in H^{k−1}).
    pub k: usize,
}

impl Default for HadamardConfig {
    fn default() -> Self {
        Self {
            n_max: 60,
            theta0: 0.5,
            theta1: 0.5,
            eps: 0.1,
            k: 1,
        }
    }
}

impl HadamardConfig {
    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.theta1 > 0.0 && self.theta1 <= self.theta0 && self.theta0 < half_pi) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < θ₁ ≤ θ₀ < π/2, got θ₀ = {}, θ₁ = {}",
                self.theta0, self.theta1
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("need 0 < ε < 1, got {}", self.eps)));
        }
        if self.n_max < 3 {
            return Err(Error::InvalidParameter(format!(
                "n_max must be at least 3, got {}",
                self.n_max
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("boundary order k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn q(&self) -> f64 {
        1.0 - self.eps
    }
}

/// Norms of one member of the family, kept as natural logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub n: usize,
    /// ln ‖φ_n‖_{L²(Ω)}.
    pub log_interior: f64,
    /// ln (‖φ_n‖_{H^k(Γ)} + ‖∂_ν φ_n‖_{H^{k−1}(Γ)}).
    pub log_boundary: f64,
}

impl FamilyPoint {
    pub fn interior_norm(&self) -> f64 {
        self.log_interior.exp()
    }

    pub fn boundary_norm(&self) -> f64 {
        self.log_boundary.exp()
    }

    pub fn log_ratio(&self) -> f64 {
        self.log_interior - self.log_boundary
    }

    pub fn ratio(&self) -> f64 {
        self.log_ratio().exp()
    }
}

/// Nodes of the composite Simpson rule used for the angular integrals.
const THETA_PANELS: usize = 64;

/// Composite Simpson rule for ∫_{−w}^{w} g(θ) dθ.
fn simpson(w: f64, g: impl Fn(f64) -> f64) -> f64 {
    let m = THETA_PANELS;
    let h = 2.0 * w / m as f64;
    let mut acc = g(-w) + g(w);
    for i in 1..m {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * g(-w + i as f64 * h);
    }
    acc * h / 3.0
}

/// |∂_θ^m φ_n(r, θ)|² = n^{2m} r^{−2n}; the angular factor |e^{inθ}|² is integrated
/// numerically so the radial and angular parts stay separate.
fn angular_mass(n: usize, w: f64) -> f64 {
    let nf = n as f64;
    simpson(w, |th| {
        let (s, c) = (nf * th).sin_cos();
        c * c + s * s
    })
}

/// ln ∫_q^1 r^{1−2n} dr, closed form.
fn log_radial(n: usize, q: f64) -> f64 {
    let lq = q.ln();
    if n == 1 {
        return (-lq).ln();
    }
    let p = 2.0 * (n as f64 - 1.0);
    // (q^{−p} − 1)/p = q^{−p}(1 − q^p)/p
    -p * lq + (-(p * lq).exp_m1()).ln() - p.ln()
}

/// ln Σ_{m=0}^{k} n^{2m}.
fn log_power_sum(n: usize, k: usize) -> f64 {
    let ln_n = (n as f64).ln();
    let top = 2.0 * k as f64 * ln_n;
    let tail: f64 = (0..=k).map(|m| (2.0 * m as f64 * ln_n - top).exp()).sum();
    top + tail.ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Interior and boundary norms of φ_n.
pub fn evaluate_family(cfg: &HadamardConfig, n: usize) -> Result<FamilyPoint> {
    cfg.validate()?;
    if n == 0 || n > cfg.n_max {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: cfg.n_max + 1,
        });
    }
    let log_interior = 0.5 * (log_radial(n, cfg.q()) + angular_mass(n, cfg.theta1).ln());

    // On r = 1: |∂_θ^m φ_n| = n^m and ∂_ν φ_n = −∂_r φ_n = n φ_n.
    let log_arc = angular_mass(n, cfg.theta0).ln();
    let ln_n = (n as f64).ln();
    let log_dirichlet = 0.5 * (log_power_sum(n, cfg.k) + log_arc);
    let log_neumann = ln_n + 0.5 * (log_power_sum(n, cfg.k - 1) + log_arc);
    Ok(FamilyPoint {
        n,
        log_interior,
        log_boundary: log_add(log_dirichlet, log_neumann),
    })
}

/// Family members n = 2..=n_max.
pub fn evaluate_range(cfg: &HadamardConfig) -> Result<Vec<FamilyPoint>> {
    cfg.validate()?;
    (2..=cfg.n_max)
        .into_par_iter()
        .map(|n| evaluate_family(cfg, n))
        .collect()
}

/// Least-squares growth rates of the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    /// Coefficient of n in ln ‖φ_n‖_Ω ≈ c₀ + s·n + c₂·ln(n−1). Expect −ln q.
    pub slope_interior: f64,
    /// Coefficient of ln(n−1); expect −1/2.
    pub log_correction: f64,
    pub residual_interior: f64,
    /// Slope of ln(boundary norm) against ln n.
    pub slope_boundary_log: f64,
    pub residual_boundary: f64,
    /// Smallest n from which interior/boundary increases at every step.
    pub monotone_from: Option<usize>,
}

/// Smallest order used by [`fit_growth`] when the range allows it. Below it the
/// factor 1 − q^{2(n−1)} of the radial integral still bends the interior curve.
pub const FIT_FROM: usize = 10;

/// Evaluates n = 2..=n_max and fits both growth laws over n ≥ [`FIT_FROM`]
/// (over every member when fewer than four lie there).
pub fn fit_growth(cfg: &HadamardConfig) -> Result<(GrowthFit, Vec<FamilyPoint>)> {
    let points = evaluate_range(cfg)?;
    let tail: Vec<FamilyPoint> = points.iter().copied().filter(|p| p.n >= FIT_FROM).collect();
    let mut fit = fit_points(if tail.len() >= 4 { &tail } else { &points })?;
    fit.monotone_from = monotone_from(&points);
    Ok((fit, points))
}

fn monotone_from(points: &[FamilyPoint]) -> Option<usize> {
    let mut from = None;
    for w in points.windows(2).rev() {
        if w[1].log_ratio() > w[0].log_ratio() {
            from = Some(w[0].n);
        } else {
            break;
        }
    }
    from
}

pub fn fit_points(points: &[FamilyPoint]) -> Result<GrowthFit> {
    if points.len() < 4 || points.iter().any(|p| p.n < 2) {
        return Err(Error::InvalidParameter(
            "growth fit needs at least four members with n ≥ 2".into(),
        ));
    }
    let m = points.len();
    let interior = DMatrix::from_fn(m, 3, |i, j| {
        let n = points[i].n as f64;
        match j {
            0 => 1.0,
            1 => n,
            _ => (n - 1.0).ln(),
        }
    });
    let y = DVector::from_iterator(m, points.iter().map(|p| p.log_interior));
    let (beta, residual_interior) = least_squares(interior, &y)?;

    let boundary = DMatrix::from_fn(m, 2, |i, j| if j == 0 { 1.0 } else { (points[i].n as f64).ln() });
    let yb = DVector::from_iterator(m, points.iter().map(|p| p.log_boundary));
    let (gamma, residual_boundary) = least_squares(boundary, &yb)?;

    Ok(GrowthFit {
        slope_interior: beta[1],
        log_correction: beta[2],
        residual_interior,
        slope_boundary_log: gamma[1],
        residual_boundary,
        monotone_from: monotone_from(points),
    })
}

/// Least squares by QR; returns coefficients and the RMS residual.
fn least_squares(a: DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let rows = a.nrows();
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::InvalidParameter("degenerate growth fit".into()));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::InvalidParameter("degenerate growth fit".into()))?;
    let res = (y - &a * &beta).norm() / (rows as f64).sqrt();
    Ok((beta, res))
}

/// Relative residual of the polar Laplacian ∂_r² + r^{−1}∂_r + r^{−2}∂_θ² applied to
/// Re φ_n and Im φ_n by central differences of width `h` at (r, θ).
pub fn harmonic_residual(n: usize, r: f64, theta: f64, h: f64) -> f64 {
    let nf = n as f64;
    let phi = |r: f64, th: f64| {
        let a = r.powf(-nf);
        let (s, c) = (nf * th).sin_cos();
        [a * c, a * s]
    };
    let mut worst: f64 = 0.0;
    let centre = phi(r, theta);
    let (rp, rm) = (phi(r + h, theta), phi(r - h, theta));
    let (tp, tm) = (phi(r, theta + h), phi(r, theta - h));
    for c in 0..2 {
        let drr = (rp[c] - 2.0 * centre[c] + rm[c]) / (h * h);
        let dr = (rp[c] - rm[c]) / (2.0 * h);
        let dtt = (tp[c] - 2.0 * centre[c] + tm[c]) / (h * h);
        let terms = [drr, dr / r, dtt / (r * r)];
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if scale > 0.0 {
            worst = worst.max((terms[0] + terms[1] + terms[2]).abs() / scale);
        }
    }
    worst
}

/// φ_n on the unit circle.
pub fn boundary_trace(n: usize, theta: f64) -> (f64, f64) {
    let (s, c) = (n as f64 * theta).sin_cos();
    (c, s)
}
