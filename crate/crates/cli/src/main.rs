use std::process::ExitCode;

use clap::Parser;
use rcql::config::Cli;

const LOG_ENV: &str = "DTR_CALIB_LOG";

fn init_logging() {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) if ["error", "warn", "info", "debug"].contains(&v.as_str()) => v,
        Ok(v) => {
            eprintln!("{LOG_ENV}={v} is not one of error, warn, info, debug; using warn");
            "warn".into()
        }
        Err(_) => "warn".into(),
    };
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match rcql::commands::run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
