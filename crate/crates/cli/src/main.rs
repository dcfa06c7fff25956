//! `spinflip`: experiments on large deviations of spin-flip dynamics.
//!
//! Exit codes: 0 on success, 1 on a runtime error or a failed check,
//! 2 on an invalid configuration (nothing is written in that case).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Outcome, RunError};
use config::{Block, ConfigError, ExperimentConfig, DEFAULT_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "spinflip", version, about = "Large deviations of spin-flip dynamics")]
struct Cli {
    /// JSON experiment configuration; the built-in default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Poisson-walk rate convergence table.
    PwRate,
    /// Magnetization exact rate against the minimized action.
    MagRate,
    /// Closed-form extremal, direct minimizer and Euler-Lagrange residuals.
    MagBvp,
    /// Three evaluations of a finite-state Lagrangian.
    FdLagrangian,
    /// Badness phase diagram over a (T, mT) grid.
    ScanBad,
    /// Glauber simulation and moment series.
    LatticeSim,
    /// Exact generator identity and finite-size scaling.
    LatticeCheck,
    /// Full numerical property suite.
    Verify,
    /// Print the built-in default configuration.
    DefaultConfig,
}

impl Command {
    fn block(self) -> Option<Block> {
        Some(match self {
            Command::PwRate => Block::PwRate,
            Command::MagRate => Block::MagRate,
            Command::MagBvp => Block::MagBvp,
            Command::FdLagrangian => Block::FdLagrangian,
            Command::ScanBad => Block::ScanBad,
            Command::LatticeSim => Block::LatticeSim,
            Command::LatticeCheck => Block::LatticeCheck,
            Command::Verify => Block::Verify,
            Command::DefaultConfig => return None,
        })
    }
}

enum Failure {
    Config(ConfigError),
    Runtime(RunError),
}

fn load(cli: &Cli, block: Block) -> Result<ExperimentConfig, Failure> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            Failure::Config(ConfigError {
                line: None,
                field: String::new(),
                message: format!("cannot read {}: {e}", path.display()),
            })
        })?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = ExperimentConfig::parse(&text).map_err(Failure::Config)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate_for(block, &text).map_err(Failure::Config)?;
    Ok(cfg)
}

fn dispatch(block: Block, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    // Validation guarantees the block and, for stochastic commands, the seed.
    let seed = cfg.seed.unwrap_or(0);
    match block {
        Block::PwRate => commands::pw_rate(cfg.pw_rate.as_ref().expect("validated")),
        Block::MagRate => commands::mag_rate(cfg.mag_rate.as_ref().expect("validated")),
        Block::MagBvp => commands::mag_bvp(cfg.mag_bvp.as_ref().expect("validated")),
        Block::FdLagrangian => commands::fd_lagrangian(cfg.fd_lagrangian.as_ref().expect("validated")),
        Block::ScanBad => commands::scan_bad(cfg.scan_bad.as_ref().expect("validated"), seed),
        Block::LatticeSim => commands::lattice_sim(cfg.lattice_sim.as_ref().expect("validated"), seed),
        Block::LatticeCheck => commands::lattice_check(cfg.lattice_check.as_ref().expect("validated"), seed),
        Block::Verify => commands::verify(cfg.verify.as_ref().expect("validated"), seed),
    }
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError {
        name: "IoError".into(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, contents) in files {
        std::fs::write(dir.join(name), contents).map_err(io)?;
    }
    Ok(())
}

fn run(cli: &Cli, block: Block) -> Result<Option<String>, Failure> {
    let cfg = load(cli, block)?;
    let workers = cfg.workers.unwrap_or(0);
    // Ignore a pool that already exists; results do not depend on its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let outcome = dispatch(block, &cfg).map_err(Failure::Runtime)?;
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&dir, &outcome.files).map_err(Failure::Runtime)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for (name, _) in &outcome.files {
        println!("wrote {}", dir.join(name).display());
    }
    Ok(outcome.failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(block) = cli.command.block() else {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    };
    match run(&cli, block) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(name)) => {
            eprintln!("error: {name}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
