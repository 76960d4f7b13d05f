use clap::Parser;
use tracing_subscriber::EnvFilter;

use peershare_cli::args::Cli;
use peershare_cli::output::Output;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    // Logs go to stderr so stdout stays machine-readable.
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    let out = Output { json: cli.json };
    if let Err(e) = peershare_cli::run(cli) {
        out.error(&e);
        std::process::exit(e.exit_code());
    }
}
