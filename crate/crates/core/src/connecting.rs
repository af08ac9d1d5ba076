//! Simulated Neumann-to-Dirichlet data for the pulse family and the connecting
//! matrix assembled from it.
//!
//! A pulse that is not cut by `t = 0` is a pure time shift of the earliest such
//! pulse at the same position, so only that one is simulated. Pulses cut at
//! `t = 0` and pulses cut at the end of their interval are simulated separately:
//! each distinct cut profile is a "variant". The end cut is handled by placing the
//! same cut relative to the earliest uncut centre and shifting.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{fnv1a, GramMatrix, PulseGrid, Receivers, PULSE_RADIUS};
use crate::domain::{DomainSpec, WavespeedField};
use crate::error::{Error, Result};
use crate::io;
use crate::signal::{load_traces, save_traces, whole_steps, BoundarySignal};
use crate::time_ops;
use crate::wave_sim::{stable_step, GaussianPulse, OutputRequest, WaveSolver};

/// Unit-amplitude temporal profile `exp(-a_t (t - t_c)^2)` switched on over `[0, cut]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub t_c: f64,
    /// `None` when the pulse is not cut at the end.
    pub cut: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// One simulation per source position.
    PerPosition,
    /// The medium is laterally uniform: one simulation at `x = 0` serves every
    /// position through a lateral shift of the receivers.
    Translation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Auto,
    PerPosition,
    Translation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NtdManifest {
    pub basis: PulseGrid,
    pub receivers: Receivers,
    pub final_time: f64,
    pub taus: Vec<f64>,
    pub generic_center: f64,
    pub variants: Vec<Variant>,
    pub layout: Layout,
    /// Position of the first recorded receiver relative to the source (translation layout).
    pub offset_first: f64,
    pub offset_count: usize,
    pub solver_dt: f64,
    pub medium: String,
    pub files: Vec<String>,
}

/// Dirichlet traces of unit-amplitude pulse variants over `[0, 2T]`.
#[derive(Clone, Debug)]
pub struct NtdDataset {
    pub manifest: NtdManifest,
    /// `traces[position][variant]`, each `(samples, receivers)`; one position in
    /// the translation layout, where columns are source-receiver offsets.
    pub traces: Vec<Vec<Array2<f64>>>,
}

/// Where the trace of pulse `(i, j)` in `S^tau` comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSource {
    pub variant: usize,
    /// Delay in receiver samples.
    pub shift: usize,
}

fn generic_center(basis: &PulseGrid) -> Result<f64> {
    (0..basis.nt)
        .find(|&i| !basis.cut_at_zero(i))
        .map(|i| basis.t_center(i))
        .ok_or_else(|| Error::InvalidParameter("every pulse is cut at t = 0".into()))
}

fn variant_for(basis: &PulseGrid, t_g: f64, i: usize, tau: f64, dt: f64) -> Result<(Variant, usize)> {
    let t_i = basis.t_center(i);
    let right = basis.cut_at(i, tau);
    if basis.cut_at_zero(i) {
        Ok((
            Variant {
                t_c: t_i,
                cut: right.then_some(tau),
            },
            0,
        ))
    } else {
        let shift = whole_steps(t_i - t_g, dt)?;
        Ok((
            Variant {
                t_c: t_g,
                cut: right.then_some(t_g + (tau - t_i)),
            },
            shift,
        ))
    }
}

fn same_variant(a: &Variant, b: &Variant) -> bool {
    (a.t_c - b.t_c).abs() < 1e-9
        && match (a.cut, b.cut) {
            (None, None) => true,
            (Some(x), Some(y)) => (x - y).abs() < 1e-9,
            _ => false,
        }
}

/// Variants needed for `S^tau`, `tau` in `taus`.
pub fn required_variants(basis: &PulseGrid, taus: &[f64], dt: f64) -> Result<(f64, Vec<Variant>)> {
    let t_g = generic_center(basis)?;
    let mut out: Vec<Variant> = vec![Variant { t_c: t_g, cut: None }];
    for &tau in taus {
        for i in 0..basis.nt_below(tau) {
            let (v, _) = variant_for(basis, t_g, i, tau, dt)?;
            if !out.iter().any(|w| same_variant(w, &v)) {
                out.push(v);
            }
        }
    }
    Ok((t_g, out))
}

impl NtdDataset {
    pub fn basis(&self) -> &PulseGrid {
        &self.manifest.basis
    }

    pub fn receivers(&self) -> &Receivers {
        &self.manifest.receivers
    }

    pub fn samples(&self) -> usize {
        self.traces[0][0].nrows()
    }

    pub fn locate(&self, i: usize, tau: f64) -> Result<TraceSource> {
        let m = &self.manifest;
        let (v, shift) = variant_for(&m.basis, m.generic_center, i, tau, m.receivers.dt)?;
        let variant = m
            .variants
            .iter()
            .position(|w| same_variant(w, &v))
            .ok_or_else(|| Error::InvalidParameter(format!("no simulated variant for pulse {i} at tau = {tau}")))?;
        Ok(TraceSource { variant, shift })
    }

    /// Unit-amplitude trace of variant `v` at position `j`, columns over the receivers.
    fn variant_trace(&self, v: usize, j: usize) -> ndarray::ArrayView2<'_, f64> {
        match self.manifest.layout {
            Layout::PerPosition => self.traces[j][v].view(),
            Layout::Translation => {
                let m = &self.manifest;
                let ratio = (m.basis.dx / m.receivers.dx).round() as usize;
                let off = (m.basis.nx - 1 - j) * ratio;
                self.traces[0][v].slice(ndarray::s![.., off..off + m.receivers.nx])
            }
        }
    }

    /// Trace of the normalized pulse `(i, j)` of `S^tau` over `[0, 2 tau]`.
    pub fn trace_of(&self, i: usize, j: usize, g: &GramMatrix) -> Result<BoundarySignal> {
        let tau = g.tau;
        if 2.0 * tau > 2.0 * self.manifest.final_time + 1e-9 {
            return Err(Error::SignalTooShort {
                have: 2.0 * self.manifest.final_time,
                need: 2.0 * tau,
            });
        }
        let src = self.locate(i, tau)?;
        let n = whole_steps(2.0 * tau, self.receivers().dt)? + 1;
        let scale = g.norm_const(i);
        let raw = self.variant_trace(src.variant, j);
        let mut out = BoundarySignal::zeros(
            self.receivers().dt,
            self.receivers().x_first,
            self.receivers().dx,
            n,
            self.receivers().nx,
        );
        for l in src.shift..n {
            let from = l - src.shift;
            out.data.row_mut(l).assign(&(&raw.row(from) * scale));
        }
        Ok(out)
    }

    pub fn id(&self) -> String {
        let mut m = self.manifest.clone();
        m.files.clear();
        let s = serde_json::to_string(&m).unwrap_or_default();
        let mut h = fnv1a(s.as_bytes());
        for per in &self.traces {
            for t in per {
                for v in t.iter().step_by(97) {
                    h ^= v.to_bits();
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        format!("{h:016x}")
    }

    /// Writes `manifest.json` and one `.trace` file (all variants) per stored position.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let r = self.receivers();
        let mut manifest = self.manifest.clone();
        manifest.files.clear();
        for (p, per) in self.traces.iter().enumerate() {
            let name = format!("source_{p:04}.trace");
            let (x0, dx) = match manifest.layout {
                Layout::PerPosition => (r.x_first, r.dx),
                Layout::Translation => (manifest.offset_first, r.dx),
            };
            let sigs: Vec<BoundarySignal> = per
                .iter()
                .map(|a| BoundarySignal {
                    dt: r.dt,
                    x0,
                    dx,
                    data: a.clone(),
                })
                .collect();
            save_traces(&dir.join(&name), &sigs)?;
            manifest.files.push(name);
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: NtdManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let mut traces = Vec::new();
        for name in &manifest.files {
            let sigs = load_traces(&dir.join(name))?;
            if sigs.len() != manifest.variants.len() {
                return Err(Error::Format(format!(
                    "{name} holds {} variants, manifest lists {}",
                    sigs.len(),
                    manifest.variants.len()
                )));
            }
            traces.push(sigs.into_iter().map(|s| s.data).collect());
        }
        Ok(NtdDataset { manifest, traces })
    }

    /// The same dataset with every trace set to zero.
    pub fn zeroed(&self) -> Self {
        let mut d = self.clone();
        for per in &mut d.traces {
            for t in per {
                t.fill(0.0);
            }
        }
        d
    }
}

/// Simulates the traces needed for `S^tau`, `tau` in `taus`, over `[0, 2 max(tau)]`.
pub fn simulate_ntd(
    spec: &DomainSpec,
    basis: &PulseGrid,
    receivers: &Receivers,
    c: &WavespeedField,
    taus: &[f64],
    strategy: Strategy,
) -> Result<NtdDataset> {
    basis.validate(spec)?;
    let t_max = taus.iter().cloned().fold(0.0, f64::max);
    if t_max > spec.final_time + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "tau = {t_max} exceeds T = {}",
            spec.final_time
        )));
    }
    let dt = stable_step(c, receivers.dt);
    let solver = WaveSolver::new(c, spec.gamma_half_width, dt)?;
    let (t_g, variants) = required_variants(basis, taus, receivers.dt)?;
    let layout = match strategy {
        Strategy::PerPosition => Layout::PerPosition,
        Strategy::Translation => Layout::Translation,
        Strategy::Auto => {
            if c.is_laterally_uniform() && c.grid.column_of(0.0).is_some() {
                Layout::Translation
            } else {
                Layout::PerPosition
            }
        }
    };
    let ratio = basis.dx / receivers.dx;
    if layout == Layout::Translation && (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "pulse spacing must be a multiple of the receiver spacing".into(),
        ));
    }
    let t_end = 2.0 * spec.final_time;
    let offset_first = receivers.x_first - basis.x_center(basis.nx - 1);
    let offset_count = receivers.nx + (basis.nx - 1) * ratio.round() as usize;
    let run = |x_c: f64, positions: &[f64], v: &Variant| -> Result<Array2<f64>> {
        let pulse = GaussianPulse {
            t_c: v.t_c,
            x_c,
            a_t: basis.a_t,
            a_x: basis.a_x,
            amp: 1.0,
            t_lo: 0.0,
            t_hi: v.cut.unwrap_or(f64::INFINITY),
            radius: PULSE_RADIUS,
        };
        let req = OutputRequest {
            trace_x: positions.to_vec(),
            trace_dt: receivers.dt,
            snapshot_times: vec![],
        };
        Ok(solver.solve_neumann(&pulse, t_end, &req)?.trace.unwrap().data)
    };
    let traces: Vec<Vec<Array2<f64>>> = match layout {
        Layout::PerPosition => {
            let pos = receivers.positions();
            (0..basis.nx)
                .into_par_iter()
                .map(|j| variants.iter().map(|v| run(basis.x_center(j), &pos, v)).collect())
                .collect::<Result<_>>()?
        }
        Layout::Translation => {
            let pos: Vec<f64> = (0..offset_count)
                .map(|k| offset_first + k as f64 * receivers.dx)
                .collect();
            let per: Vec<Array2<f64>> = variants.par_iter().map(|v| run(0.0, &pos, v)).collect::<Result<_>>()?;
            vec![per]
        }
    };
    Ok(NtdDataset {
        manifest: NtdManifest {
            basis: basis.clone(),
            receivers: receivers.clone(),
            final_time: spec.final_time,
            taus: taus.to_vec(),
            generic_center: t_g,
            variants,
            layout,
            offset_first,
            offset_count,
            solver_dt: dt,
            medium: c.label.clone(),
            files: vec![],
        },
        traces,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorTag {
    /// `J^tau Λ^{2 tau}`
    JLambda,
    /// `R^tau Λ^tau`
    RLambda,
    /// `R^tau J^tau Θ^tau`
    RJ,
}

/// `G^{-1} <phi_k, A phi_j>` on `S^tau`.
pub fn assemble_operator_matrix(tag: OperatorTag, data: &NtdDataset, g: &GramMatrix) -> Result<DMatrix<f64>> {
    let tau = g.tau;
    let n = g.dim();
    let cols: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|m| -> Result<DVector<f64>> {
            let (i, j) = (m / g.nx, m % g.nx);
            let s = match tag {
                OperatorTag::JLambda => time_ops::time_filter(&data.trace_of(i, j, g)?, tau)?,
                OperatorTag::RLambda => {
                    let tr = time_ops::restrict(&data.trace_of(i, j, g)?, tau)?;
                    time_ops::time_reverse(&tr, tau)?
                }
                OperatorTag::RJ => rj_signal(g, i, j)?,
            };
            Ok(g.flatten(&g.solve_grid(&g.inner_products(&s)?)))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn rj_signal(g: &GramMatrix, i: usize, j: usize) -> Result<BoundarySignal> {
    let p = g.build_pulse(i, j)?;
    let e = time_ops::zero_extend(&p, g.tau)?;
    time_ops::time_reverse(&time_ops::time_filter(&e, g.tau)?, g.tau)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `||A - A^T||_F / ||A||_F` for the bilinear form `A = G [K]`.
    pub symmetry_defect: f64,
    /// The same quantity for the coefficient matrix `[K]` itself.
    pub coefficient_symmetry_defect: f64,
    /// Extreme eigenvalues of `(A + A^T) / 2` relative to `G`.
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// `max(0, -lambda_min / lambda_max)`.
    pub fn negativity(&self) -> f64 {
        (-self.min_eigenvalue / self.max_eigenvalue).max(0.0)
    }
}

/// `[K^tau]` with its Gram matrix and structural diagnostics.
#[derive(Clone, Debug)]
pub struct ConnectingMatrix {
    pub tau: f64,
    pub k: DMatrix<f64>,
    pub gram: GramMatrix,
    pub symmetrized: bool,
    pub dataset_id: String,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssembleOptions {
    /// Replace the bilinear form by its symmetric part.
    pub symmetrize: bool,
    /// Skip the eigenvalue computation.
    pub skip_eigen: bool,
}

/// `[K] = [J Λ^{2 tau}] - [R Λ^tau][R J]`.
pub fn assemble_k(data: &NtdDataset, g: &GramMatrix, opts: AssembleOptions) -> Result<ConnectingMatrix> {
    let jl = assemble_operator_matrix(OperatorTag::JLambda, data, g)?;
    let rl = assemble_operator_matrix(OperatorTag::RLambda, data, g)?;
    let rj = assemble_operator_matrix(OperatorTag::RJ, data, g)?;
    let mut k = jl - rl * rj;
    if opts.symmetrize {
        let a = gram_apply_columns(g, &k);
        let s = (&a + a.transpose()) * 0.5;
        k = gram_solve_columns(g, &s);
    }
    let mut cm = ConnectingMatrix {
        tau: g.tau,
        k,
        gram: g.clone(),
        symmetrized: opts.symmetrize,
        dataset_id: data.id(),
        diagnostics: Diagnostics::default(),
    };
    cm.diagnostics = cm.diagnose(!opts.skip_eigen);
    Ok(cm)
}

/// `G M` column by column.
pub fn gram_apply_columns(g: &GramMatrix, m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..m.ncols()).map(|c| g.apply(&m.column(c).into_owned())).collect();
    DMatrix::from_columns(&cols)
}

/// `G^{-1} M` column by column.
pub fn gram_solve_columns(g: &GramMatrix, m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..m.ncols()).map(|c| g.solve(&m.column(c).into_owned())).collect();
    DMatrix::from_columns(&cols)
}

fn asym(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

impl ConnectingMatrix {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// The bilinear form `A = G [K]`, `A_{kj} ≈ <K phi_j, phi_k>`.
    pub fn form(&self) -> DMatrix<f64> {
        gram_apply_columns(&self.gram, &self.k)
    }

    /// `<K f, h>` for coefficient vectors.
    pub fn pairing(&self, f: &DVector<f64>, h: &DVector<f64>) -> f64 {
        self.gram.inner(h, &(&self.k * f))
    }

    /// Generalized eigenpairs of `(sym(A), G)`: returns `(lambda, L^T V)` with
    /// `G = L L^T`, so that `sym(A) = L V diag(lambda) V^T L^T`.
    fn gram_eigen(&self) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = self.form();
        let s = (&a + a.transpose()) * 0.5;
        let l = self.gram.cholesky_l();
        let y = l.solve_lower_triangular(&s).expect("Cholesky factor is invertible");
        let z = l
            .solve_lower_triangular(&y.transpose())
            .expect("Cholesky factor is invertible");
        let e = SymmetricEigen::new((&z + z.transpose()) * 0.5);
        (e.eigenvalues, e.eigenvectors, l)
    }

    /// Symmetric positive semidefinite part: the form is symmetrized and its
    /// negative eigenvalues relative to `G` are set to zero.
    pub fn psd_part(&self) -> ConnectingMatrix {
        let (ev, v, l) = self.gram_eigen();
        let clipped = DMatrix::from_diagonal(&ev.map(|x| x.max(0.0)));
        let lv = &l * &v;
        let a = &lv * clipped * lv.transpose();
        let mut cm = ConnectingMatrix {
            k: gram_solve_columns(&self.gram, &a),
            symmetrized: true,
            diagnostics: Diagnostics::default(),
            ..self.clone()
        };
        cm.diagnostics = cm.diagnose(false);
        cm.diagnostics.min_eigenvalue = ev.min().max(0.0);
        cm.diagnostics.max_eigenvalue = ev.max();
        cm
    }

    pub fn diagnose(&self, eigen: bool) -> Diagnostics {
        let a = self.form();
        let mut d = Diagnostics {
            symmetry_defect: asym(&a),
            coefficient_symmetry_defect: asym(&self.k),
            ..Default::default()
        };
        if eigen && a.norm() > 0.0 {
            let (ev, _, _) = self.gram_eigen();
            d.min_eigenvalue = ev.min();
            d.max_eigenvalue = ev.max();
        }
        if d.symmetry_defect > 0.05 {
            d.warnings
                .push(format!("symmetry defect {:.3e} exceeds 0.05", d.symmetry_defect));
        }
        if d.max_eigenvalue > 0.0 && d.min_eigenvalue < -0.01 * d.max_eigenvalue {
            d.warnings.push(format!(
                "smallest eigenvalue {:.3e} is below -0.01 times the largest {:.3e}",
                d.min_eigenvalue, d.max_eigenvalue
            ));
        }
        d
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = KmatHeader {
            kind: "kmat".into(),
            tau: self.tau,
            n: self.dim(),
            symmetrized: self.symmetrized,
            dataset_id: self.dataset_id.clone(),
            gram_id: self.gram.id(),
            basis: self.gram.basis.clone(),
            receivers: self.gram.receivers.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        let n = self.dim();
        let mut payload = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                payload.push(self.k[(r, c)]);
            }
        }
        io::write_container(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (KmatHeader, Vec<f64>) = io::read_container(path)?;
        if h.kind != "kmat" || payload.len() != h.n * h.n {
            return Err(Error::Format(format!("{} is not a valid kmat file", path.display())));
        }
        let gram = GramMatrix::new(&h.basis, &h.receivers, h.tau)?;
        if gram.dim() != h.n {
            return Err(Error::Format("basis in kmat header does not match matrix size".into()));
        }
        Ok(ConnectingMatrix {
            tau: h.tau,
            k: DMatrix::from_row_slice(h.n, h.n, &payload),
            gram,
            symmetrized: h.symmetrized,
            dataset_id: h.dataset_id,
            diagnostics: h.diagnostics,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct KmatHeader {
    kind: String,
    tau: f64,
    n: usize,
    symmetrized: bool,
    dataset_id: String,
    gram_id: String,
    basis: PulseGrid,
    receivers: Receivers,
    diagnostics: Diagnostics,
}
