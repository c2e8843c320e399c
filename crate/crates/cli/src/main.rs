use clap::Parser;
use sparse_hw_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) if report.outcome == "fail" => std::process::exit(1),
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
