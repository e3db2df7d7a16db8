use std::process::exit;

use clap::Parser;
use dyngraph::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(if e.is_validation() { 1 } else { 2 });
        }
    }
}
