use clap::Parser;
use fewclusters::cli::{run, Cli};

fn main() {
    env_logger::init();
    std::process::exit(run(Cli::parse()));
}
