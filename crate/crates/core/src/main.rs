use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use greedy_recon::config::{ExperimentConfig, TruthConfig};
use greedy_recon::experiments::{
    cmd_all, cmd_baseline, cmd_greedy, cmd_identify, cmd_landscape, cmd_stability_probe, cmd_taylor,
    Outcome,
};
use greedy_recon::{Error, Result};

/// Greedy control design and nonlinearity identification experiments.
///
/// Exit codes: 0 success, 1 I/O error, 2 configuration or input error,
/// 3 numerical failure, 4 finished with a non-converged or partial result.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the runtime choose.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output (or artifact) directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design controls with the greedy algorithm.
    Greedy,
    /// Identify the nonlinearity from the stored controls.
    Identify {
        /// Truth used to synthesize data instead of the configured one.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Identify from random spatially constant controls.
    Baseline {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Scan the identification objective over two coefficients.
    Landscape {
        /// Two monomials, e.g. `y1^2,y1*y2`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        pair: Option<Vec<String>>,
    },
    /// Write the Taylor-coefficient error table of a stored identification.
    Taylor,
    /// Empirical Lipschitz ratios of the coefficient-to-state map.
    StabilityProbe,
    /// Every experiment in sequence.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let out: &Path = &cfg.output_dir;
    match &cli.command {
        Command::Greedy => cmd_greedy(&cfg, out),
        Command::Identify { truth } => cmd_identify(out, truth.clone().map(TruthConfig::Named)),
        Command::Baseline { count } => cmd_baseline(&cfg, out, *count),
        Command::Landscape { pair } => {
            let pair = pair.as_ref().map(|p| [p[0].clone(), p[1].clone()]);
            cmd_landscape(out, pair)
        }
        Command::Taylor => cmd_taylor(out),
        Command::StabilityProbe => cmd_stability_probe(&cfg, out),
        Command::All => cmd_all(&cfg, out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidArtifact(_) | Error::Serde(_) => 2,
        Error::NumericalFailure(_) | Error::OracleFailure { .. } | Error::GreedyFailure { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(o) => {
            if o.partial {
                eprintln!("finished with a partial or non-converged result");
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
