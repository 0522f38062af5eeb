use std::io::Write;

use clap::Parser;
use thinline_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(report) => {
            let summary = match report.get("best") {
                Some(_) => report.clone(),
                None => {
                    let mut r = report.clone();
                    if let Some(m) = r.as_object_mut() {
                        for k in ["trace", "lm", "config"] {
                            m.remove(k);
                        }
                    }
                    r
                }
            };
            let text = serde_json::to_string_pretty(&summary).expect("report serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Err(e) => {
            eprintln!("thinline: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
