use clap::Parser;

fn main() {
    std::process::exit(distspec_cli::run(distspec_cli::Cli::parse()));
}
