use clap::Parser;

fn main() {
    let cli = sunfuse_cli::Cli::parse();
    if let Err(e) = sunfuse_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
