//! `entrance`: run experiments on positive jump-diffusions from a JSON config.
//!
//! Exit status is 0 on success and 2 when the configuration or a precondition
//! is invalid. Numerical failure gives 3 and I/O errors give 1.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Command, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "entrance",
    version,
    about = "Simulate and diagnose entrance at infinity for positive jump-diffusions",
    after_help = "Any config field can be overridden with a dotted flag, e.g. `--sim.dt 1e-4` or \
                  `--passage.n_paths=500`. Flags take precedence over the file."
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON), or a bare process spec.
    config: PathBuf,
    /// RNG seed; required for simulating commands unless `sim.seed` is set.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: config `output_dir`, then $ENTRANCE_OUTPUT_DIR, then `out`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Start for `simulate` and `passage`.
    #[arg(long)]
    x0: Option<f64>,
    /// Threshold for `passage`.
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the structural hypotheses of the spec.
    Validate(Common),
    /// Simulate an ensemble of independent paths.
    Simulate(Common),
    /// Simulate coupled flows from several starts.
    Flow(Common),
    /// Estimate first-passage times below a threshold.
    Passage(Common),
    /// Apply the analytic entrance criteria.
    Classify(Common),
    /// Run the empirical entrance diagnostics.
    Diagnose(Common),
}

/// `(dotted path, raw value)` pairs.
type Overrides = Vec<(String, String)>;

/// Splits `--a.b value` and `--a.b=value` pairs off the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg.strip_prefix("--").filter(|a| a.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(body) => match body.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| CliError {
                        code: EXIT_VALIDATION,
                        message: format!("override --{body} needs a value"),
                    })?;
                    overrides.push((body.to_string(), v));
                }
            },
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn main_inner() -> Result<(), CliError> {
    let (args, mut overrides) = split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let (command, common) = match cli.command {
        Sub::Validate(c) => (Command::Validate, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Flow(c) => (Command::Flow, c),
        Sub::Passage(c) => (Command::Passage, c),
        Sub::Classify(c) => (Command::Classify, c),
        Sub::Diagnose(c) => (Command::Diagnose, c),
    };
    if let Some(seed) = common.seed {
        overrides.push(("sim.seed".into(), seed.to_string()));
    }
    for (flag, value) in [("x0", common.x0), ("b", common.b)] {
        if let Some(v) = value {
            match command {
                Command::Passage => overrides.push((format!("passage.{flag}"), v.to_string())),
                Command::Simulate if flag == "x0" => overrides.push(("simulate.x0".into(), v.to_string())),
                _ => {
                    return Err(CliError {
                        code: EXIT_VALIDATION,
                        message: format!("--{flag} does not apply to `{}`", command.name()),
                    })
                }
            }
        }
    }
    let loaded = config::load(&common.config, &overrides)?;
    commands::run(command, &common.config, loaded, common.output_dir.as_deref(), common.workers)
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
