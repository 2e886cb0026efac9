use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsfq_cli::config::{ExperimentConfig, ExperimentKind, SCHEMA_VERSION};
use dsfq_cli::{RunError, EXIT_OK};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dsfq", version, about = "Double-shunted flux qubit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        /// Output directory (default: the config's `output`, else out/<experiment>).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads (default: the config's `workers`, else $DSFQ_WORKERS, else all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Validate and print the plan without computing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print tool and schema versions.
    Version,
}

fn fail(err: &RunError, partial: Option<&std::path::Path>) -> ExitCode {
    let mut report = json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    });
    if let Some(dir) = partial {
        report["partial_results"] = json!(dir);
    }
    eprintln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    ExitCode::from(err.exit_code() as u8)
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, RunError> {
    Ok(ExperimentConfig::load(path)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("dsfq {}", dsfq_cli::VERSION);
            println!("config schema {SCHEMA_VERSION}");
            let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            println!("experiments: {}", names.join(", "));
            ExitCode::from(EXIT_OK as u8)
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({}, {} points)", config.display(), cfg.experiment, cfg.points());
                ExitCode::from(EXIT_OK as u8)
            }
            Err(e) => fail(&e, None),
        },
        Command::Run { config, output, workers, dry_run } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e, None),
            };
            let workers = match dsfq_cli::resolve_workers(workers, &cfg) {
                Ok(n) => n,
                Err(e) => return fail(&e.into(), None),
            };
            let dir = dsfq_cli::resolve_output(output.as_deref(), &cfg);
            if dry_run {
                let plan = dsfq_cli::plan(&cfg, dir, workers);
                println!("{}", serde_json::to_string_pretty(&plan).expect("plan serializes"));
                return ExitCode::from(EXIT_OK as u8);
            }
            match dsfq_cli::run(&cfg, &dir, workers) {
                Ok(m) => {
                    let failed: Vec<_> = m.oracles.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
                    println!(
                        "{}: {} points -> {} ({:.1} s)",
                        m.experiment,
                        m.points_done,
                        dir.display(),
                        m.timings_s.get("total").copied().unwrap_or(0.0)
                    );
                    if !failed.is_empty() {
                        println!("oracles outside tolerance: {}", failed.join(", "));
                    }
                    ExitCode::from(EXIT_OK as u8)
                }
                Err(f) => fail(&f.error, f.manifest.as_ref().map(|_| dir.as_path())),
            }
        }
    }
}
