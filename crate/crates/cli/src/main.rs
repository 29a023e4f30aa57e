use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nearmiss_cli::{dispatch, load_config, CliError, Command, OUTPUT_DIR_ENV};

/// Near-miss video classification pipeline.
///
/// Configuration is a TOML file; every key has a default, so the file may
/// be empty or omitted. `NEARMISS_OUTPUT_DIR` overrides `io.output_dir`,
/// and `--set` overrides anything.
#[derive(Parser, Debug)]
#[command(name = "nearmiss", version)]
struct Args {
    /// Pipeline step to run.
    #[arg(value_enum)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.t_max=10`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Validate and print the effective configuration without running.
    #[arg(long)]
    dry_run: bool,
}

fn run(args: &Args) -> Result<(), CliError> {
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let cfg = load_config(args.config.as_deref(), &args.overrides, env.as_deref())?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    dispatch(args.command, &cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
