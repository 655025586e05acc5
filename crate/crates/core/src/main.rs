use clap::Parser;
use mpsgd::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
