use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use khs_cli::{parse_config, run_experiment, verify};

#[derive(Parser)]
#[command(name = "khs", version, about = "Koopman-van Hove hybrid dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write observables, snapshots and plots.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the invariant suite for the configured model.
    Verify { config: PathBuf },
}

fn init_threads() {
    if let Ok(v) = std::env::var("KHS_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("KHS_THREADS ignored: {e}");
                }
            }
            _ => log::warn!("KHS_THREADS={v} is not a positive integer; ignored"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = matches!(cli.command, Command::Run { quiet: true, .. });
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "warn" } else { "info" }))
        .init();
    init_threads();
    let result = match cli.command {
        Command::Run { config, output_dir, quiet } => parse_config(&config).and_then(|mut c| {
            if let Some(d) = output_dir {
                c.output_dir = d;
            }
            run_experiment(&c, quiet).map(|_| true)
        }),
        Command::Verify { config } => parse_config(&config).and_then(|c| verify(&c)).map(|checks| {
            for c in &checks {
                println!("{}", c.line());
            }
            checks.iter().all(|c| c.pass)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
