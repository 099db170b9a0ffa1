use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use domsde_cli::{run, Command, RunConfig};

/// Simulate SDEs with singular drift on space-time domains.
#[derive(Debug, Parser)]
#[command(name = "domsde", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,

    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write per-path CSV files.
    #[arg(long, overrides_with = "no_paths")]
    paths: bool,

    #[arg(long, overrides_with = "paths")]
    no_paths: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match go(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("domsde: {e}");
            ExitCode::FAILURE
        }
    }
}

fn go(cli: &Cli) -> Result<i32, domsde_cli::CliError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| domsde_cli::CliError::io(&cli.config, e))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.paths {
        cfg.output.paths = true;
    }
    if cli.no_paths {
        cfg.output.paths = false;
    }
    let code = run(cli.command, &cfg)?;
    if code != 0 {
        eprintln!(
            "domsde: report flagged invalid, see {}",
            cfg.out.join("report.json").display()
        );
    }
    Ok(code)
}
