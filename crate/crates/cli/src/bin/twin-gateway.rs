use std::process::ExitCode;

use clap::Parser;
use twin::{host_main, HostCli};
use twin_core::live::Role;

/// Validation gateway host for LIVE suites.
#[derive(Parser)]
#[command(name = "twin-gateway")]
struct Cli {
    #[command(flatten)]
    host: HostCli,
}

fn main() -> ExitCode {
    host_main(Cli::parse().host.into_args(Role::Gateway))
}
