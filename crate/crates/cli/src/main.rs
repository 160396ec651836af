use clap::Parser;

fn main() {
    let cli = rrkd_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = rrkd_cli::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.code());
    }
}
