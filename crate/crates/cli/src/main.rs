//! `twin`: run scenario suites, re-score suite directories and check
//! scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use twin_core::bundled;
use twin_core::harness::{self, HarnessError, RunOptions, EXIT_SPEC_ERROR};
use twin_core::live::LiveBinaries;
use twin_core::report;
use twin_core::scenario::{Mode, ScenarioSpec};

#[derive(Parser)]
#[command(name = "twin", version, about = "Threat-oriented digital twin testbed")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every trial of a scenario and write a suite directory.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Run simulated trials one after another instead of on the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Recompute and print the summary of a suite directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Parse and check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sim,
    Live,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

fn load_spec(arg: &str) -> Result<ScenarioSpec, String> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| format!("{arg}: {e}"))?
    } else if let Some(s) = bundled::get(arg) {
        s.to_string()
    } else {
        return Err(format!("{arg}: no such file or bundled scenario"));
    };
    text.parse().map_err(|e| format!("{e}"))
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    exit(e.exit_code())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Cmd::Run {
            scenario,
            out,
            trials,
            seed,
            mode,
            sequential,
        } => {
            let spec = match load_spec(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit(EXIT_SPEC_ERROR);
                }
            };
            let opts = RunOptions {
                trials,
                seed,
                mode: mode.map(|m| match m {
                    ModeArg::Sim => Mode::Sim,
                    ModeArg::Live => Mode::Live,
                }),
                sequential,
            };
            let bins = std::env::current_exe()
                .ok()
                .and_then(|p| p.parent().map(LiveBinaries::in_dir));
            match harness::run_scenario(&spec, &opts, &out, bins.as_ref()) {
                Ok(m) => {
                    print!("{}", report::text(&m));
                    exit(harness::exit_code(&m))
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Report { input, format } => match harness::load_suite(&input) {
            Ok(m) => {
                match format {
                    Format::Text => print!("{}", report::text(&m)),
                    Format::Machine => println!("{}", report::machine(&m)),
                }
                exit(harness::exit_code(&m))
            }
            Err(e) => fail(e),
        },
        Cmd::Validate { scenario } => match load_spec(&scenario).and_then(|s| {
            s.validate().map_err(|e| e.to_string())?;
            if s.mode == Mode::Live {
                s.validate_live().map_err(|e| e.to_string())?;
            }
            Ok(s)
        }) {
            Ok(s) => {
                println!("OK {} ({} trials, {} ms)", s.name, s.trials, s.duration_ms);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit(EXIT_SPEC_ERROR)
            }
        },
        Cmd::Scenarios => {
            for n in bundled::names() {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
    }
}
