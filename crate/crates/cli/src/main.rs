use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = opensu_cli::Cli::parse();
    match opensu_cli::run(cli) {
        Ok(value) => {
            let mut stdout = std::io::stdout().lock();
            let text = serde_json::to_string_pretty(&value).expect("JSON values always serialize");
            if writeln!(stdout, "{text}").is_err() {
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
