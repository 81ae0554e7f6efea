use clap::Parser;

fn main() {
    std::process::exit(mfg_cli::run(mfg_cli::Cli::parse()));
}
