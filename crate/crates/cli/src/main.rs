use clap::Parser;

fn main() {
    let cli = deepquality_cli::Cli::parse();
    std::process::exit(deepquality_cli::run(cli));
}
