use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use exitlab::cli_experiments::{
    default_out_dir, exit_code, run_to_dir, ExperimentConfig, Subcommand, EXIT_CHECK, EXIT_CONFIG, EXIT_OK,
};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Exit,
    Probe,
    Lclt,
    Green,
    CompareBm,
    CalibrateK0,
    Badscan,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Exit => Subcommand::Exit,
            Command::Probe => Subcommand::Probe,
            Command::Lclt => Subcommand::Lclt,
            Command::Green => Subcommand::Green,
            Command::CompareBm => Subcommand::CompareBm,
            Command::CalibrateK0 => Subcommand::CalibrateK0,
            Command::Badscan => Subcommand::Badscan,
        }
    }
}

/// Exit laws and multiscale statistics for random walks in isotropic random
/// environments.
#[derive(Parser, Debug)]
#[command(name = "exitlab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 4 when an acceptance check of the run fails.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let threads = cli
        .threads
        .or(cfg.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let out = cli.out.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let sub: Subcommand = cli.command.into();
    match run_to_dir(sub, &cfg, &out, threads) {
        Ok((manifest, failures)) => {
            for a in &manifest.artifacts {
                println!("{}  {}", a.sha256, out.join(&a.path).display());
            }
            if cli.check && !failures.is_empty() {
                for f in &failures {
                    eprintln!("check failed: {f}");
                }
                return ExitCode::from(EXIT_CHECK as u8);
            }
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
