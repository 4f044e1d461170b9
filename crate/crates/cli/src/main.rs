use clap::Parser;

fn main() -> std::process::ExitCode {
    dadg_cli::run(dadg_cli::Cli::parse())
}
