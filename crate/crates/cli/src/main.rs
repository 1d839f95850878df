use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qpnls_core::harness::{error_json, load_config, run, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    Regions,
    Dioph,
    Ldt,
    Solve,
    Evolve,
    All,
}

impl From<Stage> for Command {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Regions => Command::Regions,
            Stage::Dioph => Command::Dioph,
            Stage::Ldt => Command::Ldt,
            Stage::Solve => Command::Solve,
            Stage::Evolve => Command::Evolve,
            Stage::All => Command::All,
        }
    }
}

/// Run a qpnls pipeline stage and write its outputs plus `manifest.json`.
///
/// Exit codes: 0 pass, 2 validation error, 3 numeric failure, 4 failed check.
#[derive(Parser, Debug)]
#[command(name = "qpnls", version, about)]
struct Args {
    command: Stage,

    /// TOML or JSON config; defaults to the reference configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set params.epsilon=2e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = load_config(args.config.as_deref(), &args.overrides).map(|mut c| {
        if let Some(out) = args.out {
            c.out = out;
        }
        c
    });
    let result = config.and_then(|c| run(&c, args.command.into()));
    match result {
        Ok(manifest) => {
            for stage in &manifest.stages {
                let status = if stage.passed { "pass" } else { "FAIL" };
                println!("{:<8} {status} {:.3}s", stage.stage, stage.wall_time_s);
                if let Some(e) = &stage.error {
                    eprintln!("{}", serde_json::to_string(e).unwrap_or_default());
                }
            }
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
