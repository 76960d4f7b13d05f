//! The `peershare` command: daemons, agent and application front ends,
//! graph administration, inspection, benchmarks and scenario scripts.

pub mod args;
pub mod bench;
pub mod commands;
pub mod config;
pub mod daemon;
pub mod data;
pub mod error;
pub mod output;
pub mod scenario;

use args::{Cli, Command};
use config::Config;
use error::CliError;
use output::Output;

/// Settings shared by every subcommand: the config file plus global flags.
pub struct Globals {
    pub cfg: Config,
    pub server_url: Option<String>,
    pub pin: Vec<String>,
    pub provider_url: Option<String>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let out = Output { json: cli.json };
    let g = Globals {
        cfg: Config::discover(cli.config.as_deref())?,
        server_url: cli.server_url,
        pin: cli.pin,
        provider_url: cli.provider_url,
    };
    match cli.command {
        Command::Serve(a) => daemon::serve(&g.cfg, &a, &out),
        Command::Provider(a) => daemon::provider(&g.cfg, &a, &out),
        Command::Agent { command } => commands::agent(&g, command, &out),
        Command::App(a) => commands::app(&g, a, &out),
        Command::Graph { command } => commands::graph(&g, command, &out),
        Command::Bench(a) => bench::command(&g, &a, &out),
        Command::Inspect { command } => commands::inspect(&g, command, &out),
        Command::Scenario(a) => scenario::command(&a, &out),
    }
}
