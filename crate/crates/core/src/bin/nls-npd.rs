use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use nls_npd::io::commands::{run, Command};
use nls_npd::io::config::RunConfig;
use nls_npd::NlsError;

/// Numerical lab for the nonpolynomial differential-difference NLS.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// `key=value` overrides applied after the file.
    overrides: Vec<String>,
}

fn load(cli: &Cli) -> Result<RunConfig, NlsError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| NlsError::Config { line: 0, key: "--config".into(), message: format!("{}: {e}", path.display()) })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set_override(o)?;
    }
    Ok(cfg)
}

fn threads() -> Result<(), NlsError> {
    let Ok(v) = std::env::var("NLS_NPD_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| NlsError::Config { line: 0, key: "NLS_NPD_THREADS".into(), message: format!("`{v}` is not a positive integer") })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| NlsError::Io(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|_| load(&cli)).and_then(|cfg| run(cli.command, &cfg, &cli.out));
    match result {
        Ok(outcome) => {
            let summary = json!({
                "command": outcome.command,
                "passed": outcome.passed(),
                "failed": outcome.failures(),
                "files": outcome.files,
            });
            println!("{summary}");
            if outcome.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            let code = match e {
                NlsError::Stability { .. } => 1,
                _ => 2,
            };
            let detail = match &e {
                NlsError::Config { line, key, .. } => json!({ "line": line, "key": key }),
                _ => json!(null),
            };
            eprintln!("{}", json!({ "command": cli.command.name(), "passed": false, "error": e.to_string(), "at": detail }));
            ExitCode::from(code)
        }
    }
}
