use std::path::PathBuf;
use std::process::ExitCode;

use cav_sim::output::write_outputs;
use cav_sim::{run, Scenario, SimError, EXIT_INPUT, FIXTURES};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cav-sim", version, about = "Solve and audit intersection crossing scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in fixture.
    Run {
        /// Scenario TOML file.
        #[arg(required_unless_present = "fixture", conflicts_with = "fixture")]
        scenario: Option<PathBuf>,
        /// Built-in fixture name (see `list-fixtures`).
        #[arg(long)]
        fixture: Option<String>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed for ordering simultaneous arrivals.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the time weight γ.
        #[arg(long)]
        gamma: Option<f64>,
        /// Compare every vehicle with the transcription oracle.
        #[arg(long)]
        oracle: bool,
        /// Trajectory sampling step (s).
        #[arg(long)]
        sample_step: Option<f64>,
    },
    /// List the built-in fixtures.
    ListFixtures,
}

fn execute(cli: Cli) -> Result<i32, SimError> {
    match cli.command {
        Command::ListFixtures => {
            for (name, _) in FIXTURES {
                println!("{name}");
            }
            Ok(0)
        }
        Command::Run { scenario, fixture, out, seed, gamma, oracle, sample_step } => {
            let mut s = match (scenario, fixture) {
                (_, Some(name)) => Scenario::fixture(&name)?,
                (Some(path), None) => Scenario::from_path(&path)?,
                (None, None) => return Err(SimError::Parse("no scenario given".into())),
            };
            if let Some(seed) = seed {
                s.run.seed = seed;
                s.config.rng_seed = seed;
            }
            if let Some(g) = gamma {
                s.config.gamma = g;
            }
            if let Some(step) = sample_step {
                s.run.sample_step = step;
            }
            s.run.oracle |= oracle;
            let result = run(&s)?;
            write_outputs(&result, &out)?;
            for v in &result.vehicles {
                let state = if v.ok() { "ok" } else { "FAILED" };
                match v.trajectory() {
                    Some(t) => println!("vehicle {}: tf={:.6} J={:.9} {state}", v.arrival.id, t.tf(), t.cost(s.config.gamma).j),
                    None => println!("vehicle {}: {state}", v.arrival.id),
                }
            }
            println!("outputs written to {}", out.display());
            Ok(result.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
