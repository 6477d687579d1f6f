use clap::Parser;

fn main() {
    let cli = metacar::cli::Cli::parse();
    if let Err(e) = metacar::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
