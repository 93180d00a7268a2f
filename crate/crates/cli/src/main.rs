use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unetkf_cli::{exit_code, load_config, run_command, Command, Config};

#[derive(Parser)]
#[command(name = "unetkf", version, about = "Learned-covariance data assimilation twin experiments")]
struct Cli {
    /// Configuration file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// High-resolution nature run.
    Truth,
    /// Noisy observations of the truth for every cycle.
    Observe,
    /// Cycle one DA experiment and write its metrics.
    DaRun,
    /// Training dataset from stored ensembles.
    Extract,
    /// Train the covariance network.
    Train,
    /// Covariance-skill ratio maps of a checkpoint.
    EvalCov,
    /// Summary table over run directories; the first is the baseline.
    Report { runs: Vec<PathBuf> },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::Truth => Command::Truth,
        Cmd::Observe => Command::Observe,
        Cmd::DaRun => Command::DaRun,
        Cmd::Extract => Command::Extract,
        Cmd::Train => Command::Train,
        Cmd::EvalCov => Command::EvalCov,
        Cmd::Report { runs } => Command::Report(runs),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = cli
        .config
        .as_deref()
        .map_or_else(|| Ok(Config::default()), load_config)
        .and_then(|mut cfg| {
            if let Some(s) = cli.seed {
                cfg.set_seed(s);
            }
            run_command(&command, cfg, &cli.out)
        });
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
