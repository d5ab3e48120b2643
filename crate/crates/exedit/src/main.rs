use clap::Parser;

fn main() {
    let cli = exedit::cli::Cli::parse();
    if let Err(e) = exedit::cli::run(cli) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}
