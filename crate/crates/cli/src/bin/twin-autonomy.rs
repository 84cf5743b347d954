use std::process::ExitCode;

use clap::Parser;
use twin::{host_main, HostCli};
use twin_core::live::Role;

/// Autonomy unit host for LIVE suites.
#[derive(Parser)]
#[command(name = "twin-autonomy")]
struct Cli {
    #[arg(long)]
    unit: u16,
    #[command(flatten)]
    host: HostCli,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    host_main(cli.host.into_args(Role::Unit(cli.unit)))
}
