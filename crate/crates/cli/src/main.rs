use clap::Parser;

fn main() {
    let cli = fuzzy_attn_cli::Cli::parse();
    if let Err(e) = fuzzy_attn_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
