//! Shared entry point for the per-host LIVE binaries.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use twin_core::live::{run_host, HostArgs, Role};

#[derive(Debug, Parser)]
pub struct HostCli {
    /// Effective scenario file of the suite.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub trial: u32,
    /// JSON port map written by the harness.
    #[arg(long)]
    pub ports: PathBuf,
    /// Wall-clock instant (unix ms) that maps to scenario time zero.
    #[arg(long)]
    pub epoch_ms: u64,
    #[arg(long)]
    pub log: PathBuf,
}

impl HostCli {
    pub fn into_args(self, role: Role) -> HostArgs {
        HostArgs {
            scenario: self.scenario,
            role,
            seed: self.seed,
            trial: self.trial,
            ports: self.ports,
            epoch_ms: self.epoch_ms,
            log: self.log,
        }
    }
}

pub fn host_main(args: HostArgs) -> ExitCode {
    match run_host(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", args.role.name());
            ExitCode::FAILURE
        }
    }
}
