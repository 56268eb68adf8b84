use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod files;
mod validate;

use commands::Kind;
use config::SeedSource;
use error::CliError;

/// Harmonic-balance limit cycles, Floquet modes and phase/amplitude response
/// curves for delay differential equations.
#[derive(Parser)]
#[command(name = "ddehb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or a shipped config: `kotani_fig1`, `cortico_fig2`.
    #[arg(long)]
    config: String,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value` applied on top of the config, e.g.
    /// `harmonic.order=30` or `model.params.delta=0.1`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces `seed.source`.
    #[arg(long, value_enum)]
    seed_from: Option<SeedSource>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the limit cycle; writes orbit.csv, coefficients.json and a
    /// fresh manifest.
    Cycle(Common),
    /// Scan and refine Floquet exponents of the stored orbit; writes scan.csv,
    /// exponents.json and one eigenfunction CSV per exponent.
    Floquet(Common),
    /// Phase and/or amplitude response of the stored orbit; writes z/q CSV
    /// and coefficient JSON.
    Response {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        kind: Kind,
        /// Exponent for the amplitude response; the nearest one in
        /// exponents.json is used. Defaults to the leading nontrivial one.
        #[arg(long, allow_negative_numbers = true)]
        exponent: Option<f64>,
    },
    /// Run the whole pipeline and the oracle comparisons; prints a pass/fail
    /// table and writes validation.json.
    Validate(Common),
    /// Resample every stored curve on a uniform phase grid for plotting.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 512)]
        points: usize,
    },
}

fn resolve(common: &Common) -> Result<(config::RunConfig, PathBuf), CliError> {
    let mut overrides = common.overrides.clone();
    if let Some(source) = common.seed_from {
        let name = serde_json::to_value(source).expect("enum serializes");
        overrides.push(format!("seed.source={name}"));
    }
    let config = config::load(&common.config, &overrides)?;
    let dir = config.out_dir(common.out.as_deref());
    Ok((config, dir))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let summary = match &cli.command {
        Command::Cycle(c) => {
            let (config, dir) = resolve(c)?;
            commands::cmd_cycle(&config, &dir)?
        }
        Command::Floquet(c) => {
            let (config, dir) = resolve(c)?;
            commands::cmd_floquet(&config, &dir)?
        }
        Command::Response { common, kind, exponent } => {
            let (config, dir) = resolve(common)?;
            commands::cmd_response(&config, &dir, *kind, *exponent)?
        }
        Command::Export { common, points } => {
            let (config, dir) = resolve(common)?;
            commands::cmd_export(&config, &dir, *points)?
        }
        Command::Validate(c) => {
            let (config, dir) = resolve(c)?;
            let report = validate::run(&config, &dir)?;
            print!("{}", report.table());
            let failures = report.failures();
            if failures > 0 {
                return Err(CliError::Validation(format!("{failures} of {} checks failed", report.checks.len())));
            }
            return Ok(());
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
