use clap::Parser;

fn main() {
    let cli = pzvem_cli::Cli::parse();
    if let Err(e) = pzvem_cli::run(cli) {
        eprintln!("pzvem: {e}");
        std::process::exit(e.exit_code());
    }
}
