use std::process::ExitCode;

use clap::Parser;
use twin::{host_main, HostCli};
use twin_core::live::Role;

/// Adversarial relay host for LIVE suites.
#[derive(Parser)]
#[command(name = "twin-relay")]
struct Cli {
    /// Unit whose gateway link the relay sits on.
    #[arg(long)]
    link: u16,
    #[command(flatten)]
    host: HostCli,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    host_main(cli.host.into_args(Role::Relay(cli.link)))
}
