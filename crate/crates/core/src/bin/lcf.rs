use clap::Parser;

fn main() {
    std::process::exit(lcf::cli::main_with(lcf::cli::Cli::parse()));
}
