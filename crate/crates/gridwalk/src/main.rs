use clap::Parser;

fn main() {
    let cli = gridwalk::cli::Cli::parse();
    if let Err(e) = gridwalk::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
