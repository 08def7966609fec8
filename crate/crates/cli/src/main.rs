//! Command-line driver for the convex-Hamiltonian orbit toolkit.

mod config;
mod svg;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ScenarioConfig;
use symorb::error::Error;
use tasks::TaskContext;

#[derive(Parser)]
#[command(name = "symorb", about = "Numerical experiments with convex Hamiltonian orbits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotMode {
    None,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the task described by a scenario config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for embarrassingly parallel tasks.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum, default_value = "none")]
        plots: PlotMode,
    },
    /// List the built-in systems.
    ListSystems {
        /// One tab-separated line per system: kind and parameters.
        #[arg(long)]
        machine: bool,
    },
    /// Parse and sanity-check a scenario config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

const SYSTEMS: &[(&str, &str, &str)] = &[
    (
        "double_well",
        "omega,eps",
        "planar double well, reversible mechanical",
    ),
    ("magnetic", "beta", "rotationally symmetric magnetic system"),
    ("pendulum", "", "planar pendulum"),
    (
        "cubic_momentum",
        "eps",
        "momentum-cubic perturbation, non-constant symmetry scale",
    ),
    ("harmonic", "omegas", "harmonic oscillator with given frequencies"),
];

fn load_config(path: &PathBuf) -> Result<ScenarioConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListSystems { machine } => {
            for (kind, params, desc) in SYSTEMS {
                if machine {
                    println!("{kind}\t{params}");
                } else if params.is_empty() {
                    println!("{kind}: {desc}");
                } else {
                    println!("{kind} ({params}): {desc}");
                }
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("ok: task {}", cfg.task.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Run {
            config,
            out,
            seed,
            jobs,
            plots,
        } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return ExitCode::FAILURE;
                }
            };
            if let Some(j) = jobs {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build_global()
                {
                    eprintln!("cannot configure worker pool: {e}");
                    return ExitCode::FAILURE;
                }
            }
            let out_dir = out
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            if let Err(e) = std::fs::create_dir_all(&out_dir) {
                eprintln!("cannot create output directory: {e}");
                return ExitCode::FAILURE;
            }
            let ctx = TaskContext {
                out_dir: &out_dir,
                seed: seed.unwrap_or(cfg.seed),
                plots: matches!(plots, PlotMode::Svg),
                tols: &cfg.tolerances,
            };
            match tasks::run_task(&cfg, &ctx) {
                Ok(outcome) => {
                    for a in outcome.artifacts {
                        println!("wrote {}", a.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(Error::Inconclusive(msg)) => {
                    eprintln!("inconclusive: {msg}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
