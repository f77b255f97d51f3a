use std::path::PathBuf;
use std::process::ExitCode;

use cavity_chaos::run::{describe, execute};
use cavity_chaos::{ExperimentConfig, ExperimentKind, ThreadPool};
use clap::Parser;

/// Atom-field chaos experiments in a standing-wave cavity.
#[derive(Debug, Parser)]
#[command(name = "cavity-chaos", version)]
struct Cli {
    /// Experiment to run; the config must carry the matching block.
    experiment: ExperimentKind,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; overrides the path in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON Schema of the config format and exit.
    #[arg(long, exclusive = true, hide = true)]
    print_schema: bool,
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--print-schema") {
        let schema = cavity_chaos::config::schema();
        println!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
        return ExitCode::SUCCESS;
    }
    let cli = Cli::parse();
    let pool = match ThreadPool::new(cli.threads) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Ok(config) = ExperimentConfig::load(&cli.config) {
        eprintln!(
            "{}: {} on {} threads",
            cli.experiment,
            describe(&config),
            pool.threads()
        );
    }
    match execute(cli.experiment, &cli.config, cli.out.as_deref(), &pool) {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
