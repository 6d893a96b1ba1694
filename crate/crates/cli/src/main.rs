use clap::Parser;
use clarity_stein_cli::{configure_threads, execute, Cli};

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| execute(cli));
    if let Err(e) = result {
        eprintln!("clarity-stein: {e}");
        std::process::exit(e.exit_code());
    }
}
