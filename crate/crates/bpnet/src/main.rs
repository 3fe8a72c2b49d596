use clap::Parser;

fn main() {
    let cli = bpnet::cli::Cli::parse();
    if let Err(e) = bpnet::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
