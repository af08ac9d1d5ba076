use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redatum_cli::cache::Cache;
use redatum_cli::config::{ExperimentConfig, Stage};
use redatum_cli::pipeline::run;
use redatum_cli::Result;

#[derive(Parser)]
#[command(name = "redatum", version, about = "Redatuming from Neumann-to-Dirichlet data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages listed in the configuration.
    Run(Common),
    /// Simulate the NtD traces for the pulse basis.
    SimulateNtd {
        #[command(flatten)]
        common: Common,
        /// auto, per-position or translation.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Assemble the connecting matrices at T and T/2.
    AssembleK(Common),
    /// Sample L by moving receivers for every stored pulse.
    #[command(name = "build-L", alias = "build-l")]
    BuildL {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        control: Control,
        #[arg(long)]
        refinement: Option<usize>,
    },
    /// Reconstruct u^f(t) in the known region.
    MoveReceivers {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        control: Control,
        /// Comma-separated snapshot times in [0, T].
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Reconstruct w^F(t) in the known region.
    MoveSources {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        control: Control,
        /// Comma-separated snapshot times in [0, T/2].
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Norm growth of the Hadamard family.
    Instability {
        /// Configuration file; its `instability` block is the starting point.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        theta0: Option<f64>,
        #[arg(long)]
        theta1: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the full-domain reference solves.
    #[arg(long)]
    no_oracle: bool,
}

#[derive(Args)]
struct Control {
    #[arg(long)]
    alpha: Option<f64>,
    /// cg, gmres or direct.
    #[arg(long)]
    solver: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.no_oracle {
            cfg.oracle = false;
        }
        Ok(cfg)
    }
}

fn only(mut cfg: ExperimentConfig, stage: Stage) -> ExperimentConfig {
    cfg.stages = vec![stage];
    cfg
}

fn apply_control(cfg: &mut ExperimentConfig, c: &Control, sources: bool) {
    if let Some(a) = c.alpha {
        if sources {
            cfg.alpha_sources = a;
        } else {
            cfg.alpha_receivers = a;
        }
    }
    if let Some(s) = &c.solver {
        cfg.solver = s.clone();
    }
}

fn config_for(command: Command) -> Result<ExperimentConfig> {
    Ok(match command {
        Command::Run(common) => common.load()?,
        Command::SimulateNtd { common, strategy } => {
            let mut cfg = common.load()?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            only(cfg, Stage::SimulateNtd)
        }
        Command::AssembleK(common) => only(common.load()?, Stage::AssembleK),
        Command::BuildL {
            common,
            control,
            refinement,
        } => {
            let mut cfg = common.load()?;
            apply_control(&mut cfg, &control, true);
            if refinement.is_some() {
                cfg.refinement = refinement;
            }
            only(cfg, Stage::BuildL)
        }
        Command::MoveReceivers { common, control, times } => {
            let mut cfg = common.load()?;
            apply_control(&mut cfg, &control, false);
            if !times.is_empty() {
                cfg.receiver_times = times;
            }
            only(cfg, Stage::MoveReceivers)
        }
        Command::MoveSources { common, control, times } => {
            let mut cfg = common.load()?;
            apply_control(&mut cfg, &control, true);
            if !times.is_empty() {
                cfg.source_times = times;
            }
            only(cfg, Stage::MoveSources)
        }
        Command::Instability {
            config,
            out,
            n_max,
            eps,
            theta0,
            theta1,
            k,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let h = &mut cfg.instability;
            h.n_max = n_max.unwrap_or(h.n_max);
            h.eps = eps.unwrap_or(h.eps);
            h.theta0 = theta0.unwrap_or(h.theta0);
            h.theta1 = theta1.unwrap_or(h.theta1);
            h.k = k.unwrap_or(h.k);
            only(cfg, Stage::Instability)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config_for(cli.command).and_then(|cfg| {
        let cwd = std::env::current_dir()?;
        run(&cfg, &Cache::locate(&cwd))
    });
    match result {
        Ok(summary) => {
            for (stage, hit) in &summary.cache_hits {
                eprintln!("{stage}: {}", if *hit { "cached" } else { "computed" });
            }
            println!("{}", summary.out_dir.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
