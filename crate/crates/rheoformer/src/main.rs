use clap::Parser;

fn main() {
    let cli = rheoformer::cli::Cli::parse();
    if let Err(e) = rheoformer::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
