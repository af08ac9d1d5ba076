//! Stage orchestration with cached intermediate products.
//!
//! Products (NtD dataset, connecting matrices, sampled `L`) and stage outputs
//! live in the cache under keys chained from the configuration, so a stage
//! whose inputs are unchanged is copied rather than recomputed. `report.json`
//! holds only deterministic content; cache status and wall times go to
//! `timings.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redatum_core::basis::GramMatrix;
use redatum_core::connecting::{assemble_k, simulate_ntd, AssembleOptions, ConnectingMatrix, NtdDataset};
use redatum_core::domain::{inner_product_interior, known_region_mask, RegionMask};
use redatum_core::instability::fit_growth;
use redatum_core::redatum::{
    build_discrete_l, depth_profile_correlation, peak_lag, reference_solver, relative_error, sample_boundary,
    DiscreteL, DiscreteLOptions, KnownMedium, ReceiverMover, SourceMover,
};
use redatum_core::wave_sim::{GaussianSource, OutputRequest, SampledBoundary, Snapshot};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::cache::{self, copy_dir, Cache};
use crate::config::{ExperimentConfig, Setup, Stage};
use crate::error::{CliError, Result};
use crate::render::{amplitude, render_pair, render_snapshot};

const METRICS: &str = "metrics.json";

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    Ok(std::fs::write(path, serde_json::to_vec_pretty(v)?)?)
}

fn read_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn time_tag(t: f64) -> String {
    format!("t{t:.3}")
}

/// Cache keys, chained so that each depends on everything upstream of it.
struct Keys {
    ntd: String,
    k_full: String,
    k_half: String,
    discrete_l: String,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    cache: &'a Cache,
    setup: Setup,
    keys: Keys,
    ntd: Option<NtdDataset>,
    k_full: Option<ConnectingMatrix>,
    k_half: Option<ConnectingMatrix>,
    known: Option<KnownMedium>,
    discrete_l: Option<DiscreteL>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, cache: &'a Cache, setup: Setup) -> Result<Self> {
        let medium = if Path::new(&cfg.medium).is_file() {
            format!("file:{}", cache::file_digest(Path::new(&cfg.medium))?)
        } else {
            cfg.medium.clone()
        };
        let ntd = cache::key(
            "ntd",
            &(&setup.spec, &medium, &setup.basis, &setup.receivers, &cfg.strategy),
        )?;
        let tau = setup.spec.final_time;
        let k_full = cache::key("kmat", &(&ntd, tau))?;
        let k_half = cache::key("kmat", &(&ntd, 0.5 * tau))?;
        let discrete_l = cache::key("discrete-l", &(&k_full, cfg.source_settings()?, cfg.refinement))?;
        Ok(Runner {
            cfg,
            cache,
            setup,
            keys: Keys {
                ntd,
                k_full,
                k_half,
                discrete_l,
            },
            ntd: None,
            k_full: None,
            k_half: None,
            known: None,
            discrete_l: None,
        })
    }

    fn ntd(&mut self) -> Result<&NtdDataset> {
        if self.ntd.is_none() {
            let s = &self.setup;
            let tau = s.spec.final_time;
            let strategy = self.cfg.strategy()?;
            let (path, _) = self.cache.get_or_make("ntd", &self.keys.ntd, |tmp| {
                let d = simulate_ntd(&s.spec, &s.basis, &s.receivers, &s.c, &[tau, 0.5 * tau], strategy)?;
                Ok(d.save(tmp)?)
            })?;
            self.ntd = Some(NtdDataset::load(&path)?);
        }
        Ok(self.ntd.as_ref().expect("set above"))
    }

    fn connecting(&mut self, half: bool) -> Result<&ConnectingMatrix> {
        let loaded = if half { &self.k_half } else { &self.k_full };
        if loaded.is_none() {
            let tau = self.setup.spec.final_time * if half { 0.5 } else { 1.0 };
            let key = if half {
                self.keys.k_half.clone()
            } else {
                self.keys.k_full.clone()
            };
            let cache = self.cache;
            let (path, _) = cache.get_or_make("kmat", &key, |tmp| {
                let g = GramMatrix::new(&self.setup.basis, &self.setup.receivers, tau)?;
                let k = assemble_k(self.ntd()?, &g, AssembleOptions::default())?;
                Ok(k.save(tmp)?)
            })?;
            let k = ConnectingMatrix::load(&path)?;
            if half {
                self.k_half = Some(k);
            } else {
                self.k_full = Some(k);
            }
        }
        Ok(if half { &self.k_half } else { &self.k_full }
            .as_ref()
            .expect("set above"))
    }

    fn known(&mut self) -> Result<&KnownMedium> {
        if self.known.is_none() {
            let s = &self.setup;
            let g = GramMatrix::new(&s.basis, &s.receivers, s.spec.final_time)?;
            self.known = Some(KnownMedium::for_gram(&s.spec, &s.c, &g)?);
        }
        Ok(self.known.as_ref().expect("set above"))
    }

    fn discrete_l(&mut self) -> Result<&DiscreteL> {
        if self.discrete_l.is_none() {
            let cache = self.cache;
            let key = self.keys.discrete_l.clone();
            let (path, _) = cache.get_or_make("discrete-l", &key, |tmp| {
                self.connecting(false)?;
                self.known()?;
                let opts = DiscreteLOptions {
                    refinement: self.cfg.refinement,
                };
                let k = self.k_full.as_ref().expect("loaded");
                let known = self.known.as_ref().expect("loaded");
                Ok(build_discrete_l(k, known, self.cfg.source_settings()?, opts)?.save(tmp)?)
            })?;
            self.discrete_l = Some(DiscreteL::load(&path)?);
        }
        Ok(self.discrete_l.as_ref().expect("set above"))
    }

    fn stage_key(&self, stage: Stage) -> Result<String> {
        let c = self.cfg;
        let tag = stage.name();
        match stage {
            Stage::SimulateNtd => cache::key(tag, &self.keys.ntd),
            Stage::AssembleK => cache::key(tag, &(&self.keys.k_full, &self.keys.k_half, c.oracle, c.seed)),
            Stage::BuildL => cache::key(tag, &self.keys.discrete_l),
            Stage::MoveReceivers => cache::key(
                tag,
                &(
                    &self.keys.k_full,
                    c.receiver_settings()?,
                    &c.receiver_times,
                    c.boundary_source,
                    c.oracle,
                ),
            ),
            Stage::MoveSources => cache::key(
                tag,
                &(
                    &self.keys.k_half,
                    &self.keys.discrete_l,
                    c.source_settings()?,
                    &c.source_times,
                    c.interior_source,
                    c.oracle,
                ),
            ),
            Stage::Instability => cache::key(tag, &c.instability),
        }
    }

    /// Produces the stage directory in the cache and returns its metrics.
    fn run_stage(&mut self, stage: Stage, dir: &Path) -> Result<Value> {
        std::fs::create_dir_all(dir)?;
        let metrics = match stage {
            Stage::SimulateNtd => self.simulate_ntd()?,
            Stage::AssembleK => self.assemble_k()?,
            Stage::BuildL => self.build_l()?,
            Stage::MoveReceivers => self.move_receivers(dir)?,
            Stage::MoveSources => self.move_sources(dir)?,
            Stage::Instability => self.instability(dir)?,
        };
        write_json(&dir.join(METRICS), &metrics)?;
        Ok(metrics)
    }

    fn simulate_ntd(&mut self) -> Result<Value> {
        let d = self.ntd()?;
        let m = &d.manifest;
        Ok(json!({
            "dataset_id": d.id(),
            "layout": m.layout,
            "taus": m.taus,
            "variants": m.variants.len(),
            "positions": d.traces.len(),
            "samples": d.samples(),
            "solver_dt": m.solver_dt,
        }))
    }

    fn assemble_k(&mut self) -> Result<Value> {
        let mut out = Map::new();
        for (name, half) in [("full", false), ("half", true)] {
            let k = self.connecting(half)?;
            out.insert(
                name.into(),
                json!({
                    "tau": k.tau,
                    "dim": k.dim(),
                    "dataset_id": k.dataset_id,
                    "diagnostics": k.diagnostics,
                    "negativity": k.diagnostics.negativity(),
                }),
            );
        }
        if self.cfg.oracle {
            out.insert("pairing_defect".into(), json!(self.pairing_defect()?));
        }
        Ok(Value::Object(out))
    }

    /// Largest `|<[K]f, h> - <u^f(T), u^h(T)>| / (|u^f| |u^h|)` over three seeded pairs.
    fn pairing_defect(&mut self) -> Result<f64> {
        let s = self.setup.clone();
        let seed = self.cfg.seed;
        let k = self.connecting(false)?;
        let g = &k.gram;
        let solver = reference_solver(&s.spec, &s.c, s.receivers.dt)?;
        let full = RegionMask::full(s.c.grid);
        let req = OutputRequest {
            snapshot_times: vec![k.tau],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let mut draw = || DVector::from_fn(g.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let (f, h) = (draw(), draw());
            let uf = solver.solve_neumann(&g.forcing(&f), k.tau, &req)?.snapshots.remove(0);
            let uh = solver.solve_neumann(&g.forcing(&h), k.tau, &req)?.snapshots.remove(0);
            let ip = |a: &Snapshot, b: &Snapshot| inner_product_interior(&a.values, &b.values, &s.c, &full);
            let scale = (ip(&uf, &uf) * ip(&uh, &uh)).sqrt();
            worst = worst.max((k.pairing(&f, &h) - ip(&uf, &uh)).abs() / scale);
        }
        Ok(worst)
    }

    fn build_l(&mut self) -> Result<Value> {
        let d = self.discrete_l()?;
        Ok(json!({
            "id": d.id(),
            "records": d.records(),
            "lattice_points": d.n_points(),
            "lattice_spacing": d.lattice.spacing,
            "output_times": d.n_times,
            "time_step": d.time_step,
            "stored_pulses": d.stored,
        }))
    }

    fn write_snapshot(&self, dir: &Path, name: &str, s: &Snapshot, oracle: Option<&Snapshot>) -> Result<()> {
        let mask = &self.known.as_ref().expect("loaded").mask;
        s.save(&dir.join(format!("{name}.snap")), mask)?;
        let img = match oracle {
            Some(o) => render_pair(s, o, Some(mask))?,
            None => render_snapshot(s, amplitude(s), Some(mask))?,
        };
        img.save(&dir.join(format!("{name}.pgm")))
    }

    fn move_receivers(&mut self, dir: &Path) -> Result<Value> {
        self.connecting(false)?;
        self.known()?;
        let s = &self.setup;
        let tau = s.spec.final_time;
        let b = self.cfg.boundary_source;
        let w2 = b.width * b.width;
        let f = sample_boundary(&s.receivers, tau, |t, x| {
            (-((t - b.t_c).powi(2) + (x - b.x_c).powi(2)) / w2).exp()
        })?;
        let times = &self.cfg.receiver_times;
        let oracle = if self.cfg.oracle {
            let req = OutputRequest {
                snapshot_times: times.clone(),
                ..Default::default()
            };
            let solver = reference_solver(&s.spec, &s.c, s.receivers.dt)?;
            Some(solver.solve_neumann(&SampledBoundary(&f), tau, &req)?.snapshots)
        } else {
            None
        };
        let (k, known) = (
            self.k_full.as_ref().expect("loaded"),
            self.known.as_ref().expect("loaded"),
        );
        let mover = ReceiverMover::new(k, known, self.cfg.receiver_settings()?)?;
        let mut rows = Vec::new();
        for (n, &t) in times.iter().enumerate() {
            let sol = mover.solve(&f, t)?;
            let mut snap = mover.control.snapshot(&sol.coeffs)?;
            snap.time = t;
            let mut row = json!({
                "t": t,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "solver": format!("{:?}", sol.solver),
                "control_norm": sol.coeffs.norm(),
            });
            let reference = oracle.as_ref().map(|o| o[n].masked(&known.mask));
            if let Some(o) = &reference {
                row["relative_error"] = json!(relative_error(&snap, o, &known.c, &known.mask));
                let cc = depth_profile_correlation(&snap, o, &known.mask, 0.0, 10);
                row["peak_lag"] = json!(peak_lag(&cc).map(|(lag, _)| lag));
            }
            self.write_snapshot(dir, &format!("receivers_{}", time_tag(t)), &snap, reference.as_ref())?;
            rows.push(row);
        }
        Ok(json!({ "alpha": self.cfg.alpha_receivers, "snapshots": rows }))
    }

    fn move_sources(&mut self, dir: &Path) -> Result<Value> {
        self.connecting(true)?;
        self.known()?;
        self.discrete_l()?;
        let s = &self.setup;
        let src = self.cfg.interior_source;
        let a = src.a.unwrap_or(s.basis.a_t);
        let f = GaussianSource {
            t_c: src.t_c,
            x_c: src.x_c,
            depth_c: src.depth,
            a_t: a,
            a_x: a,
            amp: 1.0,
            radius: 6.0,
        };
        let times = &self.cfg.source_times;
        let half = 0.5 * s.spec.final_time;
        let oracle = if self.cfg.oracle {
            let req = OutputRequest {
                snapshot_times: times.clone(),
                ..Default::default()
            };
            let solver = reference_solver(&s.spec, &s.c, s.receivers.dt)?;
            Some(solver.solve_interior(&f, half, &req)?.snapshots)
        } else {
            None
        };
        let k = self.k_half.as_ref().expect("loaded");
        let known = self.known.as_ref().expect("loaded");
        let dl = self.discrete_l.as_ref().expect("loaded");
        let mover = SourceMover::new(k, dl, known, self.cfg.source_settings()?)?;
        let mut rows = Vec::new();
        for (n, &t) in times.iter().enumerate() {
            let sol = mover.solve(&f, t)?;
            let mut snap = mover.control.snapshot(&sol.coeffs)?;
            snap.time = t;
            let mut row = json!({
                "t": t,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "solver": format!("{:?}", sol.solver),
                "control_norm": sol.coeffs.norm(),
            });
            let reference = oracle.as_ref().map(|o| o[n].masked(&known.mask));
            if let Some(o) = &reference {
                row["relative_error"] = json!(relative_error(&snap, o, &known.c, &known.mask));
            }
            self.write_snapshot(dir, &format!("sources_{}", time_tag(t)), &snap, reference.as_ref())?;
            rows.push(row);
        }
        Ok(json!({ "alpha": self.cfg.alpha_sources, "snapshots": rows }))
    }

    fn instability(&mut self, dir: &Path) -> Result<Value> {
        let cfg = self.cfg.instability;
        let (fit, points) = fit_growth(&cfg)?;
        let mut w = csv::Writer::from_path(dir.join("instability.csv"))?;
        for p in &points {
            w.serialize(p)?;
        }
        w.flush()?;
        let slopes = json!({
            "config": cfg,
            "fit": fit,
            "expected_interior_slope": -cfg.q().ln(),
            "boundary_slope_limit": cfg.k as f64 + 1.5,
        });
        write_json(&dir.join("slopes.json"), &slopes)?;
        Ok(slopes)
    }
}

/// What a run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub report: Value,
    /// Stage name and whether it came from the cache.
    pub cache_hits: Vec<(&'static str, bool)>,
}

fn write_report(out: &Path, report: &Map<String, Value>) -> Result<()> {
    write_json(&out.join("report.json"), report)
}

/// Runs the requested stages in pipeline order and writes `report.json`.
///
/// A failing stage aborts the run; outputs of the stages before it stay in
/// place and the report records the failure.
pub fn run(cfg: &ExperimentConfig, cache: &Cache) -> Result<RunSummary> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let mut report = Map::new();
    report.insert("config".into(), serde_json::to_value(cfg)?);

    let setup = match cfg.validate() {
        Ok(s) => s,
        Err(e) => {
            report.insert("status".into(), json!("invalid"));
            report.insert("error".into(), json!(e.to_string()));
            write_report(&out, &report)?;
            return Err(e);
        }
    };
    let mut stages: Vec<Stage> = cfg.stages.clone();
    stages.sort();
    stages.dedup();
    if stages.is_empty() {
        report.insert("status".into(), json!("validated"));
        write_report(&out, &report)?;
        return Ok(RunSummary {
            out_dir: out,
            report: Value::Object(report),
            cache_hits: Vec::new(),
        });
    }

    let mask = known_region_mask(&setup.spec, &setup.c)?;
    report.insert(
        "layout".into(),
        json!({
            "grid": mask.grid,
            "known_radius": setup.spec.known_radius,
            "known_depth_at_centre": mask.depth_at(0.0),
            "known_nodes": mask.count(),
        }),
    );
    report.insert("status".into(), json!("running"));
    report.insert("stages".into(), json!({}));

    let mut runner = Runner::new(cfg, cache, setup)?;
    let mut timings = Map::new();
    let mut hits = Vec::new();
    for stage in stages {
        let t0 = Instant::now();
        let result = runner.stage_key(stage).and_then(|key| {
            let (dir, hit) = cache.get_or_make(&format!("stage-{}", stage.name()), &key, |tmp| {
                runner.run_stage(stage, tmp).map(|_| ())
            })?;
            copy_dir(&dir, &out.join(stage.name()))?;
            Ok((read_json(&dir.join(METRICS))?, hit))
        });
        match result {
            Ok((metrics, hit)) => {
                report["stages"][stage.name()] = metrics;
                timings.insert(
                    stage.name().into(),
                    json!({ "seconds": t0.elapsed().as_secs_f64(), "cache_hit": hit }),
                );
                hits.push((stage.name(), hit));
                write_report(&out, &report)?;
                write_json(&out.join("timings.json"), &timings)?;
            }
            Err(e) => {
                let e = CliError::Stage {
                    stage: stage.name(),
                    source: Box::new(e),
                };
                report.insert("status".into(), json!("failed"));
                report.insert("failed_stage".into(), json!(stage.name()));
                report.insert("error".into(), json!(e.to_string()));
                write_report(&out, &report)?;
                return Err(e);
            }
        }
    }
    report.insert("status".into(), json!("ok"));
    write_report(&out, &report)?;
    Ok(RunSummary {
        out_dir: out,
        report: Value::Object(report),
        cache_hits: hits,
    })
}
