use std::path::PathBuf;
use std::process::ExitCode;

use abc_cli::pipeline::{parse_name, run, Command};
use abc_cli::RunConfig;
use anyhow::{Context, Result};
use clap::Parser;

/// Builds and verifies the tower approximations stage by stage.
#[derive(Parser, Debug)]
#[command(name = "abc", version)]
struct Cli {
    /// JSON run configuration
    config: PathBuf,
    /// stage to run
    #[arg(value_enum, default_value = "all")]
    command: Command,
    /// output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// first name for `fbar` (comma separated integers, characters, or @file)
    #[arg(long, requires = "b")]
    a: Option<String>,
    /// second name for `fbar`
    #[arg(long, requires = "a")]
    b: Option<String>,
}

fn read_name(arg: &str) -> Result<String> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {path}")),
        None => Ok(arg.to_string()),
    }
}

fn threads() -> Result<()> {
    if let Ok(v) = std::env::var("ABC_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ABC_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(3);
    }
    let cfg = match std::fs::read_to_string(&cli.config).map_err(anyhow::Error::from).and_then(|t| RunConfig::from_json(&t)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e:#}", cli.config.display());
            return ExitCode::from(3);
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    if !out.is_dir() {
        eprintln!("error: output directory {} does not exist", out.display());
        return ExitCode::from(3);
    }
    let names = match (&cli.a, &cli.b) {
        (Some(a), Some(b)) => match (read_name(a).and_then(|t| parse_name(&t)), read_name(b).and_then(|t| parse_name(&t))) {
            (Ok(a), Ok(b)) => Some((a, b)),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(3);
            }
        },
        _ => None,
    };
    let result = match run(&cfg, cli.command, names) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = result.write(&out) {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    for o in &result.outputs {
        match &o.status {
            abc_cli::Status::Pass => println!("{:<14} pass", o.name),
            abc_cli::Status::Violation(m) => println!("{:<14} VIOLATION {m}", o.name),
            abc_cli::Status::Inconclusive(m) => println!("{:<14} INCONCLUSIVE {m}", o.name),
        }
    }
    ExitCode::from(result.exit_code() as u8)
}
