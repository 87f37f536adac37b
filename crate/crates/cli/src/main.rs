use clap::Parser;
use natias_cli::{exit_code, run, Cli};

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli, &argv) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
