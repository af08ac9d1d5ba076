//! Tikhonov-regularized control problems on a temporal window of the pulse family.
//!
//! Two formulations are available. `Galerkin` solves
//! `(A_WW + alpha G_WW) h = (G b)_W` with the bilinear form `A = G [K]`, which is
//! the normal equation of the Tikhonov functional restricted to the window.
//! `Coefficient` solves `([K]_WW + alpha I) h = [b]_W` on raw coefficients.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::connecting::{gram_apply_columns, ConnectingMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Formulation {
    #[default]
    Galerkin,
    Coefficient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    Cg,
    Gmres { restart: usize },
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: SolverKind::Cg,
            tol: 1e-8,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ControlSolution {
    /// Full coefficient vector; zero outside the window.
    pub coeffs: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub solver: SolverKind,
    pub history: Vec<f64>,
}

/// The window system for one connecting matrix, formulation and symmetrization.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    pub window: Range<usize>,
    pub n: usize,
    pub formulation: Formulation,
    pub symmetrize: bool,
    a_ww: DMatrix<f64>,
    pen_ww: DMatrix<f64>,
    form: DMatrix<f64>,
    gram: crate::basis::GramMatrix,
}

impl ControlSystem {
    pub fn new(k: &ConnectingMatrix, window: Range<usize>, formulation: Formulation, symmetrize: bool) -> Result<Self> {
        let n = k.dim();
        if window.is_empty() || window.end > n {
            return Err(Error::InvalidParameter(format!(
                "window {window:?} is empty or exceeds dimension {n}"
            )));
        }
        let mut form = gram_apply_columns(&k.gram, &k.k);
        if symmetrize {
            form = (&form + form.transpose()) * 0.5;
        }
        let w = window.len();
        let (a_ww, pen_ww) = match formulation {
            Formulation::Galerkin => {
                let g = k.gram.to_dense();
                (
                    form.view((window.start, window.start), (w, w)).into_owned(),
                    g.view((window.start, window.start), (w, w)).into_owned(),
                )
            }
            Formulation::Coefficient => {
                let mut kk = k.k.view((window.start, window.start), (w, w)).into_owned();
                if symmetrize {
                    kk = (&kk + kk.transpose()) * 0.5;
                }
                (kk, DMatrix::identity(w, w))
            }
        };
        Ok(ControlSystem {
            window,
            n,
            formulation,
            symmetrize,
            a_ww,
            pen_ww,
            form,
            gram: k.gram.clone(),
        })
    }

    /// Window matrix for a given regularization weight.
    pub fn matrix(&self, alpha: f64) -> DMatrix<f64> {
        &self.a_ww + &self.pen_ww * alpha
    }

    /// Window right-hand side for coefficients `[b]`.
    pub fn rhs(&self, b: &DVector<f64>) -> DVector<f64> {
        let full = match self.formulation {
            Formulation::Galerkin => self.gram.apply(b),
            Formulation::Coefficient => b.clone(),
        };
        full.rows(self.window.start, self.window.len()).into_owned()
    }

    /// Window right-hand side from `(G b)` when it is already available.
    pub fn rhs_from_gram_product(&self, gb: &DVector<f64>) -> Result<DVector<f64>> {
        match self.formulation {
            Formulation::Galerkin => Ok(gb.rows(self.window.start, self.window.len()).into_owned()),
            Formulation::Coefficient => Err(Error::InvalidParameter(
                "coefficient formulation needs [b], not G b".into(),
            )),
        }
    }

    pub fn embed(&self, h: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        out.rows_mut(self.window.start, self.window.len()).copy_from(h);
        out
    }

    pub fn solve(&self, b: &DVector<f64>, alpha: f64, opts: &SolverOptions) -> Result<ControlSolution> {
        self.solve_window(&self.rhs(b), alpha, opts)
    }

    pub fn solve_window(&self, rhs: &DVector<f64>, alpha: f64, opts: &SolverOptions) -> Result<ControlSolution> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
        }
        let m = self.matrix(alpha);
        let (h, residual, iterations, history) = match opts.kind {
            SolverKind::Cg => cg(&m, rhs, opts.tol, opts.max_iter)?,
            SolverKind::Gmres { restart } => gmres(&m, rhs, restart.max(1), opts.tol, opts.max_iter)?,
            SolverKind::Direct => {
                let h = direct(&m, rhs)?;
                let r = relative_residual(&m, &h, rhs);
                (h, r, 1, vec![r])
            }
        };
        Ok(ControlSolution {
            coeffs: self.embed(&h),
            residual,
            iterations,
            solver: opts.kind,
            history,
        })
    }

    /// Direct solve for many right-hand sides at once (columns of `rhs`).
    pub fn solve_many(&self, rhs: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
        let m = self.matrix(alpha);
        let symmetric = m == m.transpose();
        if let Some(ch) = symmetric.then(|| m.clone().cholesky()).flatten() {
            Ok(ch.solve(rhs))
        } else {
            m.lu()
                .solve(rhs)
                .ok_or_else(|| Error::Factorization("window matrix is singular".into()))
        }
    }

    /// Norm matching the penalty term.
    pub fn penalty_norm(&self, h: &DVector<f64>) -> f64 {
        let hw = h.rows(self.window.start, self.window.len());
        hw.dot(&(&self.pen_ww * hw)).max(0.0).sqrt()
    }

    /// `<K (h - z), h - z>` through the bilinear form.
    pub fn misfit(&self, h: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let d = h - z;
        d.dot(&(&self.form * &d))
    }
}

#[derive(Clone, Debug)]
pub struct ControlProblem<'a> {
    pub k: &'a ConnectingMatrix,
    pub window: Range<usize>,
    pub alpha: f64,
    /// Coefficients `[b]` on the whole family.
    pub rhs: DVector<f64>,
    pub formulation: Formulation,
    pub symmetrize: bool,
    pub options: SolverOptions,
}

pub fn solve_control(p: &ControlProblem) -> Result<ControlSolution> {
    ControlSystem::new(p.k, p.window.clone(), p.formulation, p.symmetrize)?.solve(&p.rhs, p.alpha, &p.options)
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub alpha: f64,
    pub h_norm: f64,
    /// `<K (h - z), h - z>` when the target `z` is known.
    pub misfit: Option<f64>,
    pub solution: ControlSolution,
}

/// Solves for each `alpha` (given in decreasing order).
pub fn regularization_sweep(
    p: &ControlProblem,
    alphas: &[f64],
    target: Option<&DVector<f64>>,
) -> Result<Vec<SweepPoint>> {
    if alphas.windows(2).any(|w| w[1] >= w[0]) || alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParameter("alphas must be positive and decreasing".into()));
    }
    let sys = ControlSystem::new(p.k, p.window.clone(), p.formulation, p.symmetrize)?;
    let rhs = sys.rhs(&p.rhs);
    alphas
        .iter()
        .map(|&alpha| {
            let solution = sys.solve_window(&rhs, alpha, &p.options)?;
            Ok(SweepPoint {
                alpha,
                h_norm: sys.penalty_norm(&solution.coeffs),
                misfit: target.map(|z| sys.misfit(&solution.coeffs, z)),
                solution,
            })
        })
        .collect()
}

/// Largest `||h_a - h_b|| / |a - b|` over consecutive sweep points.
pub fn sweep_lipschitz(points: &[SweepPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (&w[0].solution.coeffs - &w[1].solution.coeffs).norm() / (w[0].alpha - w[1].alpha).abs())
        .fold(0.0, f64::max)
}

fn relative_residual(m: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let bn = b.norm();
    if bn == 0.0 {
        0.0
    } else {
        (b - m * x).norm() / bn
    }
}

fn direct(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Factorization("window matrix is singular".into()))
}

type IterResult = (DVector<f64>, f64, usize, Vec<f64>);

/// Conjugate gradients from zero.
pub fn cg(m: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<IterResult> {
    let bn = b.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return Ok((x, 0.0, 0, vec![0.0]));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        let mp = m * &p;
        let pmp = p.dot(&mp);
        if !(pmp > 0.0) {
            return Err(Error::NotConverged {
                iterations: it,
                residual: rr.sqrt() / bn,
                history,
            });
        }
        let a = rr / pmp;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &mp, 1.0);
        let rr_new = r.dot(&r);
        let rel = rr_new.sqrt() / bn;
        history.push(rel);
        if rel <= tol {
            // Report the true residual, not the recursively updated one.
            let true_rel = relative_residual(m, &x, b);
            return Ok((x, true_rel, it, history));
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: relative_residual(m, &x, b),
        history,
    })
}

/// Restarted GMRES from zero.
pub fn gmres(m: &DMatrix<f64>, b: &DVector<f64>, restart: usize, tol: f64, max_iter: usize) -> Result<IterResult> {
    let n = b.len();
    let bn = b.norm();
    let mut x = DVector::zeros(n);
    if bn == 0.0 {
        return Ok((x, 0.0, 0, vec![0.0]));
    }
    let mut history = vec![1.0];
    let mut total = 0;
    while total < max_iter {
        let r = b - m * &x;
        let beta = r.norm();
        if beta / bn <= tol {
            return Ok((x, beta / bn, total, history));
        }
        let k_max = restart.min(max_iter - total).min(n);
        let mut v: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(k_max + 1, k_max);
        let mut cs = vec![0.0; k_max];
        let mut sn = vec![0.0; k_max];
        let mut g = DVector::<f64>::zeros(k_max + 1);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..k_max {
            let mut w = m * &v[k];
            for (i, vi) in v.iter().enumerate() {
                let hik = w.dot(vi);
                h[(i, k)] = hik;
                w.axpy(-hik, vi, 1.0);
            }
            // Second pass for orthogonality.
            for (i, vi) in v.iter().enumerate() {
                let c = w.dot(vi);
                h[(i, k)] += c;
                w.axpy(-c, vi, 1.0);
            }
            let hn = w.norm();
            h[(k + 1, k)] = hn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let d = h[(k, k)].hypot(h[(k + 1, k)]);
            cs[k] = if d == 0.0 { 1.0 } else { h[(k, k)] / d };
            sn[k] = if d == 0.0 { 0.0 } else { h[(k + 1, k)] / d };
            h[(k, k)] = d;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            let rel = g[k + 1].abs() / bn;
            history.push(rel);
            if rel <= tol || hn == 0.0 {
                break;
            }
            v.push(w / hn);
        }
        let mut y = DVector::<f64>::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &v[i], 1.0);
        }
        let rel = relative_residual(m, &x, b);
        if rel <= tol {
            return Ok((x, rel, total, history));
        }
    }
    Err(Error::NotConverged {
        iterations: total,
        residual: relative_residual(m, &x, b),
        history,
    })
}
