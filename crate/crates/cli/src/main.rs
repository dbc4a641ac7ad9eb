use clap::Parser;

use raindrop_cli::{run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        match &e {
            CliError::Failed(_) => {}
            CliError::Usage(m) => eprintln!("error: {m}"),
            CliError::Runtime(_) => eprintln!("error: {e}"),
        }
        std::process::exit(e.exit_code());
    }
}
