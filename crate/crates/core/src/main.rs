use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meshshare::harness::{self, Scenario};

#[derive(Parser)]
#[command(name = "meshshare", version, about = "Run hotspot file-sharing scenarios in a deterministic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print a summary.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this simulated time (ms).
        #[arg(long)]
        until: Option<u64>,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write metrics as JSON here.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Override a parameter, e.g. --set hop_latency=500.
        #[arg(long = "set", value_name = "PARAM=VALUE")]
        set: Vec<String>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match Scenario::load(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} devices, {} script steps, {} ms)",
                    scenario.display(),
                    s.devices.len(),
                    s.script.len(),
                    s.duration
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", scenario.display());
                ExitCode::from(2)
            }
        },
        Command::Run {
            scenario,
            seed,
            until,
            trace,
            metrics,
            set,
        } => {
            let mut s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = s.apply_overrides(&set) {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let outcome = harness::run(&s, until);
            print!("{}", outcome.metrics.report());
            let v = outcome.violations();
            if v.over_capacity > 0 || v.cross_subnet_blocks > 0 {
                println!("invariant violations: {v:?}");
            }
            if let Some(path) = trace {
                if let Err(e) = std::fs::write(&path, outcome.world.trace_jsonl()) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            if let Some(path) = metrics {
                if let Err(e) = std::fs::write(&path, outcome.metrics.to_json()) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            if outcome.succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
