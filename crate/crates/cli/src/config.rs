//! Experiment configuration read from JSON.

use std::path::{Path, PathBuf};

use redatum_core::basis::{PulseGrid, Receivers};
use redatum_core::connecting::Strategy;
use redatum_core::control::{SolverKind, SolverOptions};
use redatum_core::domain::{build_wavespeed, DomainSpec, WavespeedField};
use redatum_core::instability::HadamardConfig;
use redatum_core::redatum::{parse_solver, ControlSettings};
use redatum_core::signal::whole_steps;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SimulateNtd,
    AssembleK,
    #[serde(rename = "build-L", alias = "build-l")]
    BuildL,
    MoveReceivers,
    MoveSources,
    Instability,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::SimulateNtd,
        Stage::AssembleK,
        Stage::BuildL,
        Stage::MoveReceivers,
        Stage::MoveSources,
        Stage::Instability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SimulateNtd => "simulate-ntd",
            Stage::AssembleK => "assemble-k",
            Stage::BuildL => "build-L",
            Stage::MoveReceivers => "move-receivers",
            Stage::MoveSources => "move-sources",
            Stage::Instability => "instability",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainChoice {
    /// `desk` or `fine`.
    Preset(String),
    Custom(DomainSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisChoice {
    /// `desk`, `fine`, or a basis JSON file.
    Preset(String),
    Scaled {
        spacing: f64,
        a: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpacing {
    pub dx: f64,
    pub dt: f64,
}

/// Boundary source `exp(-((t - t_c)^2 + (x - x_c)^2) / width^2)` for moving receivers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySourceSpec {
    pub t_c: f64,
    pub x_c: f64,
    pub width: f64,
}

impl Default for BoundarySourceSpec {
    fn default() -> Self {
        BoundarySourceSpec {
            t_c: 0.25,
            x_c: 0.0,
            width: 0.1,
        }
    }
}

/// Interior Gaussian source for moving sources; `a` defaults to the basis width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteriorSourceSpec {
    pub t_c: f64,
    pub x_c: f64,
    pub depth: f64,
    #[serde(default)]
    pub a: Option<f64>,
}

impl Default for InteriorSourceSpec {
    fn default() -> Self {
        InteriorSourceSpec {
            t_c: 0.1,
            x_c: 0.0,
            depth: 0.25f64.exp() - 1.0,
            a: None,
        }
    }
}

fn default_domain() -> DomainChoice {
    DomainChoice::Preset("desk".into())
}

fn default_medium() -> String {
    "linear-depth".into()
}

fn default_basis() -> BasisChoice {
    BasisChoice::Preset("desk".into())
}

fn default_strategy() -> String {
    "auto".into()
}

fn default_solver() -> String {
    "cg".into()
}

fn default_alpha_receivers() -> f64 {
    ControlSettings::receivers().alpha
}

fn default_alpha_sources() -> f64 {
    ControlSettings::sources().alpha
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("redatum-out")
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_domain")]
    pub domain: DomainChoice,
    /// Wavespeed model name or `.wsgrid` file.
    #[serde(default = "default_medium")]
    pub medium: String,
    #[serde(default = "default_basis")]
    pub basis: BasisChoice,
    /// Defaults to half the pulse spacing in `x` and a tenth in `t`.
    #[serde(default)]
    pub receivers: Option<ReceiverSpacing>,
    /// `auto`, `per-position` or `translation`.
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_alpha_receivers")]
    pub alpha_receivers: f64,
    #[serde(default = "default_alpha_sources")]
    pub alpha_sources: f64,
    /// `cg`, `gmres` or `direct`.
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default)]
    pub receiver_times: Vec<f64>,
    #[serde(default)]
    pub source_times: Vec<f64>,
    #[serde(default)]
    pub boundary_source: BoundarySourceSpec,
    #[serde(default)]
    pub interior_source: InteriorSourceSpec,
    /// Compare against full-domain solves and report errors.
    #[serde(default = "default_true")]
    pub oracle: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for the random coefficient pairs of the pairing check.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub instability: HadamardConfig,
    /// Lattice refinement of the sampled `L`; matched to the basis when absent.
    #[serde(default)]
    pub refinement: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Geometry resolved from a configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub spec: DomainSpec,
    pub c: WavespeedField,
    pub basis: PulseGrid,
    pub receivers: Receivers,
}

fn field(name: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: name.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field("<file>", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| field("<json>", e.to_string()))
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        let spec = match &self.domain {
            DomainChoice::Preset(p) if p == "desk" => DomainSpec::desk(),
            DomainChoice::Preset(p) if p == "fine" => DomainSpec::fine(),
            DomainChoice::Preset(p) => return Err(field("domain", format!("unknown preset {p:?}"))),
            DomainChoice::Custom(s) => s.clone(),
        };
        spec.validate().map_err(|e| field("domain", e.to_string()))?;
        Ok(spec)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        match self.strategy.as_str() {
            "auto" => Ok(Strategy::Auto),
            "per-position" => Ok(Strategy::PerPosition),
            "translation" => Ok(Strategy::Translation),
            other => Err(field("strategy", format!("unknown strategy {other:?}"))),
        }
    }

    pub fn solver_kind(&self) -> Result<SolverKind> {
        parse_solver(&self.solver, 50).map_err(|e| field("solver", e.to_string()))
    }

    fn settings(&self, alpha: f64) -> Result<ControlSettings> {
        Ok(ControlSettings {
            alpha,
            solver: SolverOptions {
                kind: self.solver_kind()?,
                ..SolverOptions::default()
            },
            ..ControlSettings::receivers()
        })
    }

    pub fn receiver_settings(&self) -> Result<ControlSettings> {
        self.settings(self.alpha_receivers)
    }

    pub fn source_settings(&self) -> Result<ControlSettings> {
        self.settings(self.alpha_sources)
    }

    /// Builds the geometry and checks every field against it.
    pub fn validate(&self) -> Result<Setup> {
        let spec = self.domain_spec()?;
        let c = build_wavespeed(&spec, &self.medium).map_err(|e| field("medium", e.to_string()))?;
        let basis = match &self.basis {
            BasisChoice::Preset(name) => PulseGrid::preset(name, &spec).map_err(|e| field("basis", e.to_string()))?,
            BasisChoice::Scaled { spacing, a } => {
                if !(*spacing > 0.0 && *a > 0.0) {
                    return Err(field("basis", "spacing and a must be positive"));
                }
                PulseGrid::scaled(&spec, *spacing, *a)
            }
        };
        basis.validate(&spec).map_err(|e| field("basis", e.to_string()))?;
        let receivers = match self.receivers {
            Some(r) => Receivers::uniform(&spec, &c, r.dx, r.dt),
            None => Receivers::for_basis(&spec, &c, &basis),
        }
        .map_err(|e| field("receivers", e.to_string()))?;

        self.strategy()?;
        self.solver_kind()?;
        for (name, a) in [
            ("alpha_receivers", self.alpha_receivers),
            ("alpha_sources", self.alpha_sources),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(field(name, format!("must be positive, got {a}")));
            }
        }
        let big_t = spec.final_time;
        check_times("receiver_times", &self.receiver_times, big_t, receivers.dt)?;
        check_times("source_times", &self.source_times, 0.5 * big_t, receivers.dt)?;
        if self.stages.contains(&Stage::MoveReceivers) && self.receiver_times.is_empty() {
            return Err(field("receiver_times", "move-receivers needs at least one time"));
        }
        if self.stages.contains(&Stage::MoveSources) && self.source_times.is_empty() {
            return Err(field("source_times", "move-sources needs at least one time"));
        }
        if !(self.boundary_source.width > 0.0) {
            return Err(field("boundary_source.width", "must be positive"));
        }
        let s = &self.interior_source;
        if !(s.depth > 0.0 && s.depth < spec.depth) {
            return Err(field(
                "interior_source.depth",
                format!("must lie in (0, {})", spec.depth),
            ));
        }
        if s.a.is_some_and(|a| !(a > 0.0)) {
            return Err(field("interior_source.a", "must be positive"));
        }
        if self.refinement == Some(0) {
            return Err(field("refinement", "must be positive"));
        }
        self.instability
            .validate()
            .map_err(|e| field("instability", e.to_string()))?;
        Ok(Setup {
            spec,
            c,
            basis,
            receivers,
        })
    }
}

fn check_times(name: &str, times: &[f64], t_end: f64, dt: f64) -> Result<()> {
    for &t in times {
        if !(0.0..=t_end + 1e-12).contains(&t) {
            return Err(field(name, format!("{t} lies outside [0, {t_end}]")));
        }
        whole_steps(t, dt).map_err(|_| field(name, format!("{t} is not a multiple of the receiver step {dt}")))?;
    }
    Ok(())
}
