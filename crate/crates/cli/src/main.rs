use clap::Parser;

fn main() {
    std::process::exit(fusiondet_cli::run(fusiondet_cli::Cli::parse()));
}
