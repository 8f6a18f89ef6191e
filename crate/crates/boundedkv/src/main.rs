use clap::Parser;

fn main() {
    let cli = boundedkv::cli::Cli::parse();
    match boundedkv::cli::execute(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
