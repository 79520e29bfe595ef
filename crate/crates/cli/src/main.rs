use clap::Parser;

fn main() {
    if let Err(e) = dsbm_cli::run(dsbm_cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
